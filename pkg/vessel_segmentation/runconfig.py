"""
Purpose: Run configuration assembled from key=value files and CLI overrides

High-level Overview:
Everything that shapes a run (network, training, preprocessing, augmentation,
labelling, evaluation) is collected in a `RunConfig`. Config files merge left to
right, `--set key=value` overrides come next and `--seed` is applied last, so all
randomness flows from a single number.

Functions/Classes:
- `class RunConfig`: All sections plus CLI plumbing
  - `load(cls, subcommand, config_paths, overrides, ...)`: Merge files and overrides
  - `apply(self, key, value, source)`: Set one `section.field` key
  - `render(self)`: Canonical key=value text
  - `digest(self)`: SHA-256 of the canonical text
- `parse_config_lines(text, source)`: Parse key=value text into triples
"""

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

from .config import Config, EvalConfig, LabelConfig, PreprocessConfig
from .errors import ConfigError
from .network import NetConfig
from .preprocess import AugmentConfig
from .training import TrainConfig

SECTIONS = ("net", "train", "pre", "aug", "label", "eval")


@dataclass
class RunConfig:
    """Resolved configuration of one CLI invocation."""
    subcommand: str = ""
    manifest: Optional[Path] = None
    config_paths: List[Path] = field(default_factory=list)
    output_dir: Path = Path(Config.DEFAULT_OUTPUT_DIR)
    seed: int = Config.DEFAULT_SEED
    overrides: List[str] = field(default_factory=list)

    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pre: PreprocessConfig = field(default_factory=PreprocessConfig)
    aug: AugmentConfig = field(default_factory=AugmentConfig)
    label: LabelConfig = field(default_factory=LabelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def load(
        cls,
        subcommand: str = "",
        config_paths: Sequence[Path] = (),
        overrides: Sequence[str] = (),
        seed: Optional[int] = None,
        manifest: Optional[Path] = None,
        output_dir: Optional[Path] = None,
    ) -> "RunConfig":
        """Merge config files (left to right), then overrides, then the seed."""
        run = cls(subcommand=subcommand)
        run.manifest = Path(manifest) if manifest else None
        run.output_dir = Path(output_dir or Config.get_output_dir())
        run.config_paths = [Path(p) for p in config_paths]
        run.overrides = list(overrides)

        for path in run.config_paths:
            text = path.read_text(encoding="utf-8")
            for line_number, key, value in parse_config_lines(text, str(path)):
                run.apply(key, value, f"{path}:{line_number}")

        for override in run.overrides:
            if "=" not in override:
                raise ConfigError(f"override {override!r} is not of the form key=value")
            key, value = override.split("=", 1)
            run.apply(key.strip(), value.strip(), f"--set {override}")

        run.seed = Config.get_default_seed() if seed is None else int(seed)
        run.train.seed = run.seed
        run.aug.seed = run.seed

        run.net.validate()
        run.train.validate()
        run.aug.validate()
        run.label.validate()
        run.pre.validate()
        run.eval.validate(run.pre.patch_size)
        run.output_dir.mkdir(parents=True, exist_ok=True)
        return run

    def apply(self, key: str, value: str, source: str) -> None:
        """Set one `section.field` key from its text value."""
        if "." not in key:
            raise ConfigError(f"{source}: key {key!r} must look like section.field")
        section_name, field_name = key.split(".", 1)
        if section_name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section {section_name!r} in key {key!r}")
        section = getattr(self, section_name)
        known = {f.name: f for f in dataclasses.fields(section)}
        if field_name not in known:
            raise ConfigError(f"{source}: unknown key {key!r}")
        current = getattr(section, field_name)
        try:
            coerced = _coerce(value, current)
        except ValueError as e:
            raise ConfigError(f"{source}: bad value for {key!r}: {e}")
        setattr(section, field_name, coerced)

    def render(self) -> str:
        """Render the resolved sections as canonical key=value text."""
        lines = []
        for section_name in SECTIONS:
            section = getattr(self, section_name)
            for f in dataclasses.fields(section):
                lines.append(f"{section_name}.{f.name}={_render_value(getattr(section, f.name))}")
        return "\n".join(lines) + "\n"

    def digest(self) -> bytes:
        """SHA-256 over the canonical rendering."""
        return hashlib.sha256(self.render().encode("utf-8")).digest()


def parse_config_lines(text: str, source: str = "<config>") -> List[Tuple[int, str, str]]:
    """Parse key=value text into (line number, key, value) triples."""
    pairs = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_number}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((line_number, key.strip(), value.strip()))
    return pairs


def _coerce(value: str, current: Any) -> Any:
    """Convert text to the type of the field's current value."""
    if isinstance(current, bool):
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        items = [item.strip() for item in value.split(",") if item.strip()]
        if not items:
            raise ValueError("expected a comma-separated list")
        if current and isinstance(current[0], int) and not isinstance(current[0], bool):
            return tuple(int(item) for item in items)
        return tuple(float(item) for item in items)
    return value


def _render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)
