from .base import ProtocolBase, ProtocolConfig, TrafficItem, make_traffic
from .esrpsdc import Esrpsdc, EsrpsdcParams
from .leach import Leach
from .pegasis import Pegasis

PROTOCOLS = {"esrpsdc": Esrpsdc, "leach": Leach, "pegasis": Pegasis}
