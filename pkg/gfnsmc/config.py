import copy
import json
import logging
import os

import yaml

from gfnsmc.exceptions import ConfigError
from gfnsmc.utils import override_dict

logger = logging.getLogger(__name__)

PROFILE_DIR = os.path.join(os.path.dirname(__file__), "data", "profiles")

ALGORITHMS = ("iwt", "smc", "replay", "combined")
PRIORITIES = ("iw", "uniform", "reward", "loss")
RESAMPLING = ("multinomial", "systematic")
POLICY_LOSSES = ("tb", "lv")
FLOW_LOSSES = ("subtb_chunk", "subtb_lambda")
PROCESSES = ("diffusion", "prepend_append")
ACTIVATIONS = ("gelu", "silu", "softplus", "tanh")


def _positive(name, value, kind=float):
    try:
        value = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a {kind.__name__}, got {value!r}.")
    if value <= 0:
        raise ConfigError(f"{name} must be positive, got {value}.")
    return value


def _non_negative_int(name, value):
    if isinstance(value, bool) or int(value) != value or value < 0:
        raise ConfigError(f"{name} must be a non-negative integer, got {value!r}.")
    return int(value)


def _fraction(name, value):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}.")
    return value


def _choice(name, value, choices):
    if value not in choices:
        raise ConfigError(f"{name} must be one of {list(choices)}, got {value!r}.")
    return value


class TrainConfig(object):
    """
    Settings of a training run.

    Every setter validates its value and raises
    :class:`~gfnsmc.exceptions.ConfigError` naming the field. Constraints that
    couple several fields (the chunk length must divide the number of steps)
    are checked by :meth:`validate`, which :func:`load_config` calls once all
    keys are applied.

    The defaults are the ``paper`` profile. ``target`` is a dictionary passed
    to :func:`gfnsmc.targets.make_target`.
    """

    #: Keys written by :meth:`to_dict`, in order.
    FIELDS = (
        "profile",
        "algo",
        "target",
        "process",
        "n_steps",
        "sigma",
        "ou_rate",
        "langevin",
        "langevin_clip",
        "hidden_policy",
        "hidden_flow",
        "activation",
        "final_scale",
        "n_epoch",
        "off_policy_ratio",
        "batch_size",
        "chunk",
        "kappa",
        "gamma",
        "buffer_capacity",
        "priority",
        "resampling",
        "loss_policy",
        "loss_flow",
        "subtb_lambda",
        "learn_schedule",
        "learn_correction",
        "lr_policy",
        "lr_log_z",
        "lr_flow",
        "lr_schedule",
        "grad_clip",
        "log_ratio_clip",
        "epsilon",
        "seed",
        "checkpoint_every",
        "eval_every",
        "eval_samples",
        "log_every",
        "log_wall_time",
    )

    def __init__(self):
        self.profile = "paper"
        self.algo = "combined"
        self.target = {"name": "gmm40", "dim": 2}
        self.process = None
        self.n_steps = 64
        self.sigma = None
        self.ou_rate = 2.5
        self.langevin = False
        self.langevin_clip = 100.0
        self.hidden_policy = 256
        self.hidden_flow = 64
        self.activation = "gelu"
        self.final_scale = 0.01
        self.n_epoch = 20000
        self.off_policy_ratio = 2
        self.batch_size = 2000
        self.chunk = 4
        self.kappa = 0.2
        self.gamma = 0.05
        self.buffer_capacity = 200000
        self.priority = "iw"
        self.resampling = "multinomial"
        self.loss_policy = "tb"
        self.loss_flow = "subtb_chunk"
        self.subtb_lambda = 0.9
        self.learn_schedule = True
        self.learn_correction = True
        self.lr_policy = 1e-3
        self.lr_log_z = 1e-1
        self.lr_flow = 1e-3
        self.lr_schedule = 1e-1
        self.grad_clip = 10.0
        self.log_ratio_clip = None
        self.epsilon = 0.0
        self.seed = 0
        self.checkpoint_every = 1000
        self.eval_every = 0
        self.eval_samples = 2000
        self.log_every = 100
        self.log_wall_time = False

    @property
    def algo(self) -> str:
        """str: Training loop, one of ``iwt``, ``smc``, ``replay`` or ``combined``."""
        return self._algo

    @algo.setter
    def algo(self, value):
        self._algo = _choice("algo", value, ALGORITHMS)

    @property
    def target(self) -> dict:
        """dict: Target options, ``{"name": ..., **arguments}``."""
        return self._target

    @target.setter
    def target(self, value):
        if not isinstance(value, dict) or "name" not in value:
            raise ConfigError(f"target must be a dictionary with a 'name', got {value!r}.")
        self._target = dict(value)

    @property
    def is_discrete(self) -> bool:
        """bool: Whether the target is a sequence reward."""
        return self.target["name"] == "sequence"

    @property
    def process(self) -> str:
        """str: ``prepend_append`` for sequence targets, ``diffusion`` otherwise, unless set."""
        if self._process is None:
            return "prepend_append" if self.is_discrete else "diffusion"
        return self._process

    @process.setter
    def process(self, value):
        self._process = None if value is None else _choice("process", value, PROCESSES)

    @property
    def n_steps(self) -> int:
        """int: Number of transitions ``N``; the string length for sequence targets."""
        if self.process == "prepend_append":
            return int(self.target.get("length", 4))
        return self._n_steps

    @n_steps.setter
    def n_steps(self, value):
        self._n_steps = int(_positive("n_steps", value, int))

    @property
    def sigma(self) -> float:
        """float: Noise scale of the reference process; 20 for ``gmm40`` and 1 otherwise, unless set."""
        if self._sigma is None:
            return 20.0 if self.target["name"] in ("gmm40", "gmm") else 1.0
        return self._sigma

    @sigma.setter
    def sigma(self, value):
        self._sigma = None if value is None else _positive("sigma", value)

    @property
    def activation(self) -> str:
        return self._activation

    @activation.setter
    def activation(self, value):
        self._activation = _choice("activation", value, ACTIVATIONS)

    @property
    def off_policy_ratio(self) -> int:
        """int: ``I``; epoch ``i`` is on-policy when ``i % I == 0``."""
        return self._off_policy_ratio

    @off_policy_ratio.setter
    def off_policy_ratio(self, value):
        value = _non_negative_int("off_policy_ratio", value)
        if value < 1:
            raise ConfigError("off_policy_ratio must be at least 1.")
        self._off_policy_ratio = value

    @property
    def batch_size(self) -> int:
        """int: Number of trajectories (or particles) ``K`` per epoch."""
        return self._batch_size

    @batch_size.setter
    def batch_size(self, value):
        self._batch_size = _positive("batch_size", value, int)

    @property
    def chunk(self) -> int:
        """int: SMC segment length ``L``."""
        return self._chunk

    @chunk.setter
    def chunk(self, value):
        self._chunk = _positive("chunk", value, int)

    @property
    def kappa(self) -> float:
        """float: Resample when the ESS falls below ``kappa * K``."""
        return self._kappa

    @kappa.setter
    def kappa(self, value):
        self._kappa = _fraction("kappa", value)

    @property
    def gamma(self) -> float:
        """float: Target ESS fraction of adaptive tempering."""
        return self._gamma

    @gamma.setter
    def gamma(self, value):
        self._gamma = _fraction("gamma", value)

    @property
    def epsilon(self) -> float:
        """float: Exploration probability of the discrete process."""
        return self._epsilon

    @epsilon.setter
    def epsilon(self, value):
        self._epsilon = _fraction("epsilon", value)

    @property
    def buffer_capacity(self) -> int:
        return self._buffer_capacity

    @buffer_capacity.setter
    def buffer_capacity(self, value):
        self._buffer_capacity = _positive("buffer_capacity", value, int)

    @property
    def priority(self) -> str:
        """str: Replay prioritisation, one of ``iw``, ``uniform``, ``reward`` or ``loss``."""
        return self._priority

    @priority.setter
    def priority(self, value):
        self._priority = _choice("priority", value, PRIORITIES)

    @property
    def resampling(self) -> str:
        return self._resampling

    @resampling.setter
    def resampling(self, value):
        self._resampling = _choice("resampling", value, RESAMPLING)

    @property
    def loss_policy(self) -> str:
        return self._loss_policy

    @loss_policy.setter
    def loss_policy(self, value):
        self._loss_policy = _choice("loss_policy", value, POLICY_LOSSES)

    @property
    def loss_flow(self) -> str:
        return self._loss_flow

    @loss_flow.setter
    def loss_flow(self, value):
        self._loss_flow = _choice("loss_flow", value, FLOW_LOSSES)

    @property
    def subtb_lambda(self) -> float:
        return self._subtb_lambda

    @subtb_lambda.setter
    def subtb_lambda(self, value):
        self._subtb_lambda = _positive("subtb_lambda", value)

    @property
    def learning_rates(self) -> dict:
        """dict: Learning rate of each optimiser group."""
        return {
            "policy": self.lr_policy,
            "log_z": self.lr_log_z,
            "flow": self.lr_flow,
            "schedule": self.lr_schedule,
        }

    @property
    def seed(self) -> int:
        return self._seed

    @seed.setter
    def seed(self, value):
        self._seed = _non_negative_int("seed", value)

    def validate(self):
        """
        Check the constraints between fields.

        Raises
        ------
        ConfigError
            Naming the offending field.
        """
        for name in ("lr_policy", "lr_log_z", "lr_flow", "lr_schedule", "grad_clip"):
            setattr(self, name, _positive(name, getattr(self, name)))
        for name in ("hidden_policy", "hidden_flow", "n_epoch", "eval_samples", "log_every"):
            setattr(self, name, _positive(name, getattr(self, name), int))
        for name in ("checkpoint_every", "eval_every"):
            setattr(self, name, _non_negative_int(name, getattr(self, name)))
        for name in ("ou_rate", "langevin_clip", "final_scale"):
            setattr(self, name, _positive(name, getattr(self, name)))
        if self.log_ratio_clip is not None:
            self.log_ratio_clip = _positive("log_ratio_clip", self.log_ratio_clip)
        if self.n_steps % self.chunk != 0:
            raise ConfigError(
                f"chunk: L = {self.chunk} does not divide N = {self.n_steps}."
            )
        if self.is_discrete != (self.process == "prepend_append"):
            raise ConfigError(
                f"process: {self.process!r} cannot sample the target {self.target['name']!r}."
            )
        if self.epsilon > 0 and not self.is_discrete:
            raise ConfigError("epsilon: exploration is only defined for sequence targets.")
        if self.langevin and self.is_discrete:
            raise ConfigError("langevin: sequence targets have no gradient.")
        return self

    def to_dict(self):
        """Plain dictionary of every field; unset derived values stay ``None``."""
        values = {}
        for name in self.FIELDS:
            if name in ("process", "sigma"):
                values[name] = getattr(self, f"_{name}")
            elif name == "n_steps":
                values[name] = self._n_steps
            else:
                values[name] = copy.deepcopy(getattr(self, name))
        return values

    def __eq__(self, other):
        return isinstance(other, TrainConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"TrainConfig(profile={self.profile!r}, algo={self.algo!r}, target={self.target!r})"

    def update(self, values):
        """
        Apply ``values`` on top of the current settings.

        A ``target`` with the same name updates the current options; a
        different name replaces them.
        """
        unknown = sorted(set(values) - set(self.FIELDS))
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}.")
        for name, value in values.items():
            if name == "target" and isinstance(value, dict):
                if value.get("name", self.target["name"]) == self.target["name"]:
                    target = dict(self.target)
                    override_dict(target, value)
                    value = target
            setattr(self, name, value)
        return self

    @classmethod
    def from_profile(cls, name):
        """
        Configuration with the defaults of the named profile (``paper`` or ``desk``).
        """
        path = os.path.join(PROFILE_DIR, f"{name}.json")
        if not os.path.isfile(path):
            available = sorted(os.path.splitext(f)[0] for f in os.listdir(PROFILE_DIR))
            raise ConfigError(f"Unknown profile {name!r}; choose from {available}.")
        with open(path, "r") as f:
            values = json.load(f)
        config = cls()
        config.update(values)
        config.profile = name
        return config

    @classmethod
    def from_dict(cls, values):
        """Inverse of :meth:`to_dict`."""
        values = dict(values)
        config = cls.from_profile(values.pop("profile", "paper"))
        config.update(values)
        return config.validate()


def read_config_file(file_path):
    """
    Read a configuration file into a dictionary.

    Files ending in ``.yaml`` or ``.yml`` are parsed as YAML, anything else as JSON.

    Raises
    ------
    ConfigError
        If the file is missing or cannot be parsed.
    """
    if not os.path.isfile(file_path):
        raise ConfigError(f"No configuration file at {file_path}.")
    with open(file_path, "r") as f:
        if os.path.splitext(file_path)[1].lower() in (".yaml", ".yml"):
            try:
                values = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError(f"Cannot parse {file_path}: {e}")
        else:
            try:
                values = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Cannot parse {file_path} at byte {e.pos}: {e.msg}")
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"{file_path} must contain a mapping at the top level.")
    return values


def load_config(file_path, profile=None):
    """
    Load and validate a training configuration.

    Parameters
    ----------
    file_path : os.PathLike
        JSON (canonical) or YAML file. A ``profile`` key selects the defaults.
    profile : str, optional
        Overrides the file's profile.

    Returns
    -------
    TrainConfig
    """
    values = read_config_file(file_path)
    if profile is not None:
        values["profile"] = profile
    config = TrainConfig.from_dict(values)
    logger.debug(f"Loaded {config} from {file_path}")
    return config


def save_config(config, file_path):
    """Write ``config`` as indented JSON with sorted keys."""
    with open(file_path, "w") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
