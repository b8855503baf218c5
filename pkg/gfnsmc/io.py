import base64
import csv
import json
import logging
import os

import numpy as np
import torch

from gfnsmc.exceptions import CheckpointError

logger = logging.getLogger(__name__)

#: Version written into every checkpoint; other versions are rejected.
CHECKPOINT_FORMAT_VERSION = 1

# https://stackoverflow.com/questions/27909658/json-encoder-and-decoder-for-complex-numpy-arrays
# https://stackoverflow.com/a/24375113/901925


class NumpyEncoder(json.JSONEncoder):
    """Encode :class:`numpy.ndarray` and :class:`torch.Tensor` losslessly in JSON."""

    def default(self, obj):
        """If input object is an ndarray or a tensor it will be converted into
        a dict holding dtype, shape and the raw bytes, base64 encoded.

        Parameters
        ----------
        obj: object
            Input object to encode.

        Returns
        -------
        dict, int or float
            JSON-serialisable representation.
        """
        if isinstance(obj, torch.Tensor):
            obj = obj.detach().cpu().numpy()
        if isinstance(obj, np.ndarray):
            obj = np.ascontiguousarray(obj)
            data_b64 = base64.b64encode(obj.data)
            return dict(
                __ndarray__=data_b64.decode("utf-8"),
                dtype=obj.dtype.str,
                shape=list(obj.shape),
            )
        elif isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.bool_):
            return bool(obj)

        # Let the base class default method raise the TypeError
        return super(NumpyEncoder, self).default(obj)


def json_numpy_obj_hook(dct):
    """Decodes a previously encoded :class:`numpy.ndarray` with proper shape and `dtype`.

    Parameters
    ----------
    dct: dict
        json encoded ndarray.

    Returns
    -------
    dct: :class:`numpy.ndarray`
        if input was an encoded ndarray.
    """
    if isinstance(dct, dict) and "__ndarray__" in dct:
        data = base64.b64decode(dct["__ndarray__"])
        return np.frombuffer(data, dct["dtype"]).reshape(dct["shape"])
    return dct


def module_arrays(module):
    """State dictionary of a :class:`torch.nn.Module` as float64 numpy arrays."""
    return {
        name: value.detach().cpu().numpy().copy()
        for name, value in module.state_dict().items()
    }


def load_module_arrays(module, arrays):
    """Inverse of :func:`module_arrays`; the arrays are copied."""
    module.load_state_dict(
        {name: torch.tensor(np.array(value)) for name, value in arrays.items()}
    )


class Checkpoint(object):
    """
    Everything needed to resume or evaluate a training run.

    Parameters
    ----------
    config : dict
        :meth:`TrainConfig.to_dict` output.
    epoch : int
        Number of completed epochs.
    parameters : dict
        ``{"policy": arrays, "flow": arrays}``; see :func:`module_arrays`.
    optimiser : dict
        :meth:`Optimiser.state_dict` output.
    rng : dict
        ``{"seed": ..., "epoch": ...}``; see :class:`~gfnsmc.utils.RandomStreams`.
    buffer : dict, optional
        :meth:`ReplayBuffer.to_dict` output.
    """

    def __init__(self, config, epoch, parameters, optimiser, rng, buffer=None):
        self.config = config
        self.epoch = int(epoch)
        self.parameters = parameters
        self.optimiser = optimiser
        self.rng = rng
        self.buffer = buffer

    def to_dict(self):
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": self.config,
            "epoch": self.epoch,
            "parameters": self.parameters,
            "optimiser": self.optimiser,
            "rng": self.rng,
            "buffer": self.buffer,
        }


def save_checkpoint(file_path, checkpoint):
    """Write a :class:`Checkpoint` as JSON with sorted keys.

    Parameters
    ----------
    file_path: os.PathLike
        The name of the JSON file to write to.
    checkpoint: Checkpoint
    """
    logger.debug(f"Saving checkpoint of epoch {checkpoint.epoch} to {file_path}")
    with open(file_path, "w") as f:
        json.dump(checkpoint.to_dict(), f, cls=NumpyEncoder, sort_keys=True)


def load_checkpoint(file_path):
    """Load a :class:`Checkpoint` written by :func:`save_checkpoint`.

    Raises
    ------
    CheckpointError
        If the file is missing, is not valid JSON (the message gives the byte
        offset), lacks a field or has another format version.
    """
    if not os.path.isfile(file_path):
        raise CheckpointError(f"No checkpoint at {file_path}.")
    with open(file_path, "r") as f:
        text = f.read()
    try:
        data = json.loads(text, object_hook=json_numpy_obj_hook)
    except json.JSONDecodeError as e:
        raise CheckpointError(
            f"Corrupt checkpoint {file_path}: {e.msg} at byte offset {e.pos}."
        )
    if not isinstance(data, dict):
        raise CheckpointError(f"Corrupt checkpoint {file_path}: not a JSON object.")
    version = data.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"Checkpoint format version {version} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})."
        )
    missing = sorted(
        {"config", "epoch", "parameters", "optimiser", "rng"} - set(data)
    )
    if missing:
        raise CheckpointError(f"Checkpoint {file_path} lacks {', '.join(missing)}.")
    return Checkpoint(
        data["config"],
        data["epoch"],
        data["parameters"],
        data["optimiser"],
        data["rng"],
        data.get("buffer"),
    )


def save_samples(file_path, samples, columns=None, log_weights=None, log_z_hat=None):
    """
    Write samples as CSV with a header row.

    Parameters
    ----------
    file_path : os.PathLike
    samples : numpy.ndarray
        ``(K, d)`` coordinates.
    columns : list of str, optional
        Coordinate names; ``x0, x1, ...`` by default.
    log_weights : numpy.ndarray, optional
        Appended as a ``log_weight`` column.
    log_z_hat : float, optional
        Appended as a constant ``log_z_hat`` column.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    columns = columns or [f"x{i}" for i in range(samples.shape[1])]
    table = [samples]
    if log_weights is not None:
        table.append(np.asarray(log_weights, dtype=np.float64).reshape(-1, 1))
        columns = columns + ["log_weight"]
    if log_z_hat is not None:
        table.append(np.full((len(samples), 1), float(log_z_hat)))
        columns = columns + ["log_z_hat"]
    np.savetxt(
        file_path,
        np.concatenate(table, axis=1),
        delimiter=",",
        header=",".join(columns),
        comments="",
        fmt="%.17g",
    )


def load_samples(file_path):
    """Read a file written by :func:`save_samples` into ``(column names, array)``."""
    with open(file_path, "r") as f:
        columns = f.readline().strip().split(",")
    return columns, np.loadtxt(file_path, delimiter=",", skiprows=1, ndmin=2)


def save_strings(file_path, strings, log_weights=None, log_z_hat=None):
    """
    Write sampled strings as CSV with a ``string`` column and the optional
    weight columns of :func:`save_samples`.
    """
    columns = ["string"]
    if log_weights is not None:
        columns.append("log_weight")
    if log_z_hat is not None:
        columns.append("log_z_hat")
    with open(file_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for i, string in enumerate(strings):
            row = [string]
            if log_weights is not None:
                row.append(repr(float(log_weights[i])))
            if log_z_hat is not None:
                row.append(repr(float(log_z_hat)))
            writer.writerow(row)
