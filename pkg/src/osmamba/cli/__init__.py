from .checkpoint import CheckpointError, decode, encode, load, save
from .config import ConfigError, RunConfig, load_config, parse_config, serialize_config
from .imageio import ImageError, load_png, save_png
from .main import main
