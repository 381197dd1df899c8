import json
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional

import numpy as np

from src.storage import formats
from src.storage.archive import TensorArchive
from src.utils.errors import FormatError

Arrays = Dict[str, np.ndarray]


def quantize(arrays: Mapping[str, np.ndarray]) -> Arrays:
    # Persistent state is kept on the f32 grid the checkpoint stores.

    return {name: np.asarray(a, dtype=np.float32).astype(np.float64) for name, a in arrays.items()}


@dataclass
class TrainState:

    params: Arrays
    ema: Arrays
    adam_m: Arrays
    adam_v: Arrays
    iteration: int = 0

    def quantized(self) -> 'TrainState':

        return TrainState(
            params=quantize(self.params),
            ema=quantize(self.ema),
            adam_m=quantize(self.adam_m),
            adam_v=quantize(self.adam_v),
            iteration=self.iteration
        )


def encode_config(config: Mapping[str, Any]) -> np.ndarray:

    raw = json.dumps(config, sort_keys=True).encode('utf-8')
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float64)


def decode_config(values: np.ndarray) -> Dict[str, Any]:

    try:
        return json.loads(bytes(np.asarray(values, dtype=np.uint8).tolist()).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"config echo is unreadable: {e}")


class Checkpoint:

    def __init__(self, tensors: Mapping[str, np.ndarray]):

        self.tensors: Arrays = OrderedDict(tensors)

    @classmethod
    def from_state(cls, state: TrainState, config: Optional[Mapping[str, Any]] = None) -> 'Checkpoint':

        tensors = OrderedDict()
        for prefix, arrays in (
            (formats.PARAMS_PREFIX, state.params),
            (formats.EMA_PREFIX, state.ema),
            (formats.ADAM_M_PREFIX, state.adam_m),
            (formats.ADAM_V_PREFIX, state.adam_v),
        ):
            for name, value in arrays.items():
                tensors[prefix + name] = value

        tensors[formats.META_ITERATION] = np.array([float(state.iteration)])
        tensors[formats.META_CONFIG] = encode_config(config or {})
        return cls(tensors)

    def _group(self, prefix: str) -> Arrays:

        group = OrderedDict()
        for name, value in self.tensors.items():
            found, short = formats.split_name(name)
            if found == prefix:
                group[short] = value
        return group

    @property
    def iteration(self) -> int:

        if formats.META_ITERATION not in self.tensors:
            raise FormatError(f"checkpoint is missing '{formats.META_ITERATION}'")
        return int(self.tensors[formats.META_ITERATION][0])

    @property
    def config(self) -> Dict[str, Any]:

        if formats.META_CONFIG not in self.tensors:
            return {}
        return decode_config(self.tensors[formats.META_CONFIG])

    def weights(self, use_ema: bool = True) -> Arrays:

        weights = self._group(formats.EMA_PREFIX if use_ema else formats.PARAMS_PREFIX)
        if not weights:
            raise FormatError("checkpoint holds no generator weights")
        return weights

    def to_state(self) -> TrainState:

        unknown = [name for name in self.tensors if not (formats.is_state_tensor(name) or formats.is_meta_tensor(name))]
        if unknown:
            raise FormatError(f"checkpoint holds unknown tensors: {unknown}")

        params = self._group(formats.PARAMS_PREFIX)
        groups = {
            'ema': self._group(formats.EMA_PREFIX),
            'adam_m': self._group(formats.ADAM_M_PREFIX),
            'adam_v': self._group(formats.ADAM_V_PREFIX),
        }

        for label, group in groups.items():
            missing = [name for name in params if name not in group]
            if missing or len(group) != len(params):
                raise FormatError(f"checkpoint '{label}' tensors do not match params (missing: {missing})")
            for name, value in group.items():
                if value.shape != params[name].shape:
                    raise FormatError(
                        f"checkpoint tensor '{label}/{name}' has shape {value.shape}, params have {params[name].shape}"
                    )

        return TrainState(params=params, iteration=self.iteration, **groups)

    def encode(self) -> bytes:

        return TensorArchive.encode(formats.CHECKPOINT_MAGIC, self.tensors)

    def __eq__(self, other) -> bool:

        if not isinstance(other, Checkpoint):
            return NotImplemented
        if list(self.tensors) != list(other.tensors):
            return False
        return all(np.array_equal(self.tensors[name], other.tensors[name]) for name in self.tensors)


def save_checkpoint(checkpoint: Checkpoint, path: str):

    TensorArchive.save(path, formats.CHECKPOINT_MAGIC, checkpoint.tensors)


def load_checkpoint(path: str) -> Checkpoint:

    return Checkpoint(TensorArchive.load(path, formats.CHECKPOINT_MAGIC))
