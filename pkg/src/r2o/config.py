"""Configuração de execução: dataclasses por seção + arquivo INI (configparser).

Gramática: seções `[nome]` com linhas `chave = valor`; comentários com `#` ou
`;`. Valores seguem o tipo do campo: inteiro, real, booleano
(true/false/yes/no/on/off/1/0), texto, `none` para campos opcionais e listas
separadas por vírgula para tuplas. Seções ou chaves desconhecidas são erro.
Campos derivados (épocas do currículo e do τ, lado das vistas, passos totais
e tamanho de lote do otimizador) não aparecem no arquivo.
"""
from __future__ import annotations
from dataclasses import dataclass, field, fields, replace
import configparser
import hashlib
import logging
import types
import typing
from pathlib import Path

from r2o.augment import AugmentationConfig
from r2o.dataset import DatasetConfig
from r2o.encoder import EncoderConfig, HeadConfig
from r2o.objective import ObjectiveConfig
from r2o.optim import OptimConfig, TauConfig
from r2o.refine import CurriculumConfig, RefineConfig
from r2o.slic import PriorConfig, SlicConfig
from r2o.synthetic import SyntheticCorpusSpec

log = logging.getLogger("r2o.config")

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0
    epochs: int = 300
    batch_size: int = 32
    output_dir: str = "runs/r2o"
    checkpoint_every: int = 1
    mask_dump_every: int = 0
    mask_dump_images: int = 4
    workers: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs deve ser >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size deve ser >= 2 (o agrupamento por lote precisa de mais "
                             "de uma imagem)")
        if min(self.checkpoint_every, self.mask_dump_every, self.mask_dump_images,
               self.workers) < 0:
            raise ValueError("Cadências e workers devem ser >= 0")


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    synthetic: SyntheticCorpusSpec = field(default_factory=SyntheticCorpusSpec)
    prior: PriorConfig = field(default_factory=PriorConfig)
    slic: SlicConfig = field(default_factory=SlicConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    tau: TauConfig = field(default_factory=TauConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)

    def __post_init__(self):
        # sincroniza os campos derivados com as seções que os definem
        for name, derived in _derived_values(self.run, self.encoder).items():
            section = getattr(self, name)
            if any(getattr(section, k) != v for k, v in derived.items()):
                setattr(self, name, _build(name, type(section), derived, base=section))

    def steps_per_epoch(self, n_images: int) -> int:
        if n_images < 2:
            raise ConfigError(f"Corpus com {n_images} imagem(ns); são necessárias ao menos 2")
        return max(1, n_images // self.run.batch_size)

    def optim_for(self, n_images: int) -> OptimConfig:
        total = self.run.epochs * self.steps_per_epoch(n_images)
        return replace(self.optim, total_steps=total)


_SECTIONS = tuple(f.name for f in fields(RunConfig))


def _derived_values(run: RunSection, encoder: EncoderConfig) -> dict[str, dict]:
    return {
        "curriculum": {"epochs": run.epochs},
        "tau": {"epochs": run.epochs},
        "optim": {"batch_size": run.batch_size},
        "augment": {"side": encoder.side},
    }


_DERIVED_KEYS = {
    "curriculum": ("epochs",),
    "tau": ("epochs",),
    "optim": ("batch_size", "total_steps"),
    "augment": ("side",),
}


def _build(section: str, cls, values: dict, base=None):
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _coerce(text: str, hint, where: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    raw = text.strip()
    if origin in (typing.Union, types.UnionType):
        if raw.lower() in ("none", ""):
            return None
        inner = next(a for a in args if a is not type(None))
        return _coerce(raw, inner, where)
    if origin is tuple:
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(s, args[0], where) for s in items)
        if len(items) != len(args):
            raise ConfigError(f"{where}: esperados {len(args)} valores, recebidos {len(items)}")
        return tuple(_coerce(s, a, where) for s, a in zip(items, args))
    if hint is bool:
        if raw.lower() in _TRUE:
            return True
        if raw.lower() in _FALSE:
            return False
        raise ConfigError(f"{where}: booleano inválido {raw!r}")
    try:
        return hint(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: valor inválido {raw!r} ({hint.__name__})") from exc


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#", ";")
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"Arquivo de configuração malformado: {exc}") from exc

    unknown = [s for s in parser.sections() if s not in _SECTIONS]
    if unknown:
        raise ConfigError(f"Seções desconhecidas: {', '.join(unknown)}")

    raw: dict[str, dict] = {}
    for name in _SECTIONS:
        cls = _section_types()[name]
        hints = typing.get_type_hints(cls)
        allowed = {f.name for f in fields(cls) if not f.name.startswith("_")}
        allowed -= set(_DERIVED_KEYS.get(name, ()))
        values = {}
        if parser.has_section(name):
            for key, text_value in parser.items(name):
                if key not in allowed:
                    raise ConfigError(f"[{name}] chave desconhecida: {key}")
                values[key] = _coerce(text_value, hints[key], f"[{name}] {key}")
        raw[name] = values

    run = _build("run", RunSection, raw["run"])
    encoder = _build("encoder", EncoderConfig, raw["encoder"])
    derived = _derived_values(run, encoder)
    built = {"run": run, "encoder": encoder}
    for name in _SECTIONS:
        if name in built:
            continue
        cls = _section_types()[name]
        built[name] = _build(name, cls, {**raw[name], **derived.get(name, {})})
    return RunConfig(**built)


def _section_types() -> dict[str, type]:
    hints = typing.get_type_hints(RunConfig)
    return {name: hints[name] for name in _SECTIONS}


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Não foi possível ler {path}: {exc}") from exc
    cfg = parse_config(text)
    log.info("Configuração carregada de %s (hash %s)", path, config_hash(cfg).hex()[:12])
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Texto canônico: seções e chaves na ordem dos campos, sem os campos derivados."""
    lines = []
    for name in _SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(section):
            if f.name.startswith("_") or f.name in _DERIVED_KEYS.get(name, ()):
                continue
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: RunConfig) -> bytes:
    """SHA-256 do texto canônico (32 bytes)."""
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).digest()


def override(cfg: RunConfig, section: str, **changes) -> RunConfig:
    """Cópia de `cfg` com campos de uma seção trocados; os campos derivados acompanham."""
    if section not in _SECTIONS:
        raise ConfigError(f"Seção desconhecida: {section}")
    sections = {name: getattr(cfg, name) for name in _SECTIONS}
    current = sections[section]
    sections[section] = _build(section, type(current), changes, base=current)
    return RunConfig(**sections)
