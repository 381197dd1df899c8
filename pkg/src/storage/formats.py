CHECKPOINT_MAGIC = b"RDDM"
IMAGE_MAGIC = b"RDDI"

FORMAT_VERSION = 1

IMAGE_CLEAN = "x"
IMAGE_NOISY = "y"

PARAMS_PREFIX = "params/"
EMA_PREFIX = "ema/"
ADAM_M_PREFIX = "adam_m/"
ADAM_V_PREFIX = "adam_v/"

META_ITERATION = "meta/iteration"
META_CONFIG = "meta/config"

STATE_PREFIXES = (PARAMS_PREFIX, EMA_PREFIX, ADAM_M_PREFIX, ADAM_V_PREFIX)


def is_checkpoint(magic: bytes) -> bool:

    return magic == CHECKPOINT_MAGIC


def is_image_archive(magic: bytes) -> bool:

    return magic == IMAGE_MAGIC


def is_meta_tensor(name: str) -> bool:

    return name.startswith("meta/")


def is_state_tensor(name: str) -> bool:

    return any(name.startswith(prefix) for prefix in STATE_PREFIXES)


def split_name(name: str):

    for prefix in STATE_PREFIXES:
        if name.startswith(prefix):
            return prefix, name[len(prefix):]
    return None, name
