"""
Settingsモジュール

実験設定ファイル(INI形式)の読み出し・検証と、実効設定の書き出し。

書式:
    [section]
    key = value   # 行頭の # または ; はコメント
セクションとキーは DEFAULTS に列挙されたものだけを受け付ける。
値は文字列のまま マージ(既定値 < ファイル < コマンドライン) してから、
schema で一括して型変換・検証する。
"""
from __future__ import annotations

__all__ = ["DEFAULTS", "ExperimentSettings", "FedFVSettings", "ModelSettings", "FederationSettings",
           "TrainingSettings", "ExperimentConfig", "read_config_file", "merge_settings", "config_dict2config",
           "config2dict", "read_config", "write_effective_config", "parse_groups"]

import configparser
import dataclasses
import pathlib as p
import re
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

from schema import And, Or, Schema, SchemaError, Use

from .FedCore import ALGORITHMS, FEDFV, LOSS_ASCENDING, ORDER_MODES
from .Models import FULL_BATCH, MLP2, MODEL_KINDS, SOFTMAX_REGRESSION
from .Utility import ConfigError, floor_fraction

SettingsDict = Dict[str, Dict[str, str]]

DEFAULTS: Mapping[str, Mapping[str, str]] = {
    "experiment": {"algorithm": FEDFV, "order_mode": LOSS_ASCENDING, "seeds": "1,2,3,4,5", "eval_every": "10",
                   "output_dir": "results", "workers": "1", "dump_data": "no"},
    "fedfv": {"alpha": "0.1", "tau": "10", "sample_fraction": "0.1", "sample_count": "", "dropout_prob": "0.0",
              "rounds": "300"},
    "model": {"kind": SOFTMAX_REGRESSION, "hidden_dim": "32"},
    "federation": {"num_clients": "100", "shards_per_client": "2", "num_classes": "10",
                   "examples_per_class": "1500", "feature_dim": "32", "cluster_spread": "0.4",
                   "partition": "shards", "idx_images": "", "idx_labels": ""},
    "training": {"epochs": "1", "batch_size": FULL_BATCH, "learning_rate": "0.1"},
}

_GROUPS_PATTERN = re.compile(r"^groups:(\d+(,\d+)*)(\|\d+(,\d+)*)*$")


@dataclasses.dataclass(frozen=True)
class ExperimentSettings:
    algorithm: str
    order_mode: str
    seeds: Tuple[int, ...]
    eval_every: int
    output_dir: p.Path
    workers: int
    dump_data: bool


@dataclasses.dataclass(frozen=True)
class FedFVSettings:
    alpha: float
    tau: int
    sample_fraction: float
    sample_count: Optional[int]  # 指定があれば sample_fraction より優先
    dropout_prob: float
    rounds: int


@dataclasses.dataclass(frozen=True)
class ModelSettings:
    kind: str
    hidden_dim: int


@dataclasses.dataclass(frozen=True)
class FederationSettings:
    num_clients: int
    shards_per_client: int
    num_classes: int
    examples_per_class: int
    feature_dim: int
    cluster_spread: float
    partition: str  # "shards" または "groups:0,1|2,3|..."
    idx_images: Optional[p.Path]
    idx_labels: Optional[p.Path]

    @property
    def groups(self) -> Optional[Sequence[Sequence[int]]]:
        return parse_groups(self.partition)


@dataclasses.dataclass(frozen=True)
class TrainingSettings:
    epochs: int
    batch_size: Union[int, str]
    learning_rate: float


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """
    1つの実験の全設定
    """
    experiment: ExperimentSettings
    fedfv: FedFVSettings
    model: ModelSettings
    federation: FederationSettings
    training: TrainingSettings

    @property
    def sample_count(self) -> int:
        """
        1ラウンドにサンプルするクライアント数m
        """
        if self.fedfv.sample_count is not None:
            return self.fedfv.sample_count
        return max(1, floor_fraction(self.fedfv.sample_fraction, self.federation.num_clients))


def parse_groups(partition: str) -> Optional[Sequence[Sequence[int]]]:
    """
    "groups:0,1|2|3,4" をクライアントごとのクラスのリストにする。"shards" なら None。
    """
    if partition == "shards":
        return None
    return [[int(label) for label in group.split(",")] for group in partition[len("groups:"):].split("|")]


def _positive_int(path: str) -> And:
    return And(Use(int), lambda v: v > 0, error=f"{path} must be a positive integer")


def _non_negative_int(path: str) -> And:
    return And(Use(int), lambda v: v >= 0, error=f"{path} must be a non-negative integer")


def _choice(path: str, choices: Sequence[str]) -> And:
    return And(str, lambda v: v in choices, error=f"{path} must be one of {', '.join(choices)}")


def _optional_path(path: str) -> Or:
    return Or(And("", Use(lambda _: None)),
              And(Use(p.Path), lambda v: v.is_file(), error=f"{path}: file does not exist"))


def _yes_no(path: str) -> And:
    return And(Use(str.lower), lambda v: v in ("yes", "no", "true", "false"),
               Use(lambda v: v in ("yes", "true")), error=f"{path} must be yes or no")


def _seeds(text: str) -> Tuple[int, ...]:
    seeds: Tuple[int, ...] = tuple(int(seed) for seed in text.split(","))
    if not seeds or min(seeds) < 0:
        raise ValueError(text)
    return seeds


_SCHEMAS: Mapping[str, Schema] = {
    "experiment": Schema({
        "algorithm": _choice("experiment.algorithm", ALGORITHMS),
        "order_mode": _choice("experiment.order_mode", ORDER_MODES),
        "seeds": And(Use(_seeds), error="experiment.seeds must be comma-separated non-negative integers"),
        "eval_every": _positive_int("experiment.eval_every"),
        "output_dir": And(str, len, Use(p.Path), error="experiment.output_dir must not be empty"),
        "workers": _positive_int("experiment.workers"),
        "dump_data": _yes_no("experiment.dump_data"),
    }),
    "fedfv": Schema({
        "alpha": And(Use(float), lambda v: 0.0 <= v <= 1.0, error="fedfv.alpha must be in [0, 1]"),
        "tau": _non_negative_int("fedfv.tau"),
        "sample_fraction": And(Use(float), lambda v: 0.0 < v <= 1.0,
                               error="fedfv.sample_fraction must be in (0, 1]"),
        "sample_count": Or(And("", Use(lambda _: None)), _positive_int("fedfv.sample_count")),
        "dropout_prob": And(Use(float), lambda v: 0.0 <= v < 1.0, error="fedfv.dropout_prob must be in [0, 1)"),
        "rounds": _positive_int("fedfv.rounds"),
    }),
    "model": Schema({
        "kind": _choice("model.kind", MODEL_KINDS),
        "hidden_dim": _positive_int("model.hidden_dim"),
    }),
    "federation": Schema({
        "num_clients": _positive_int("federation.num_clients"),
        "shards_per_client": _positive_int("federation.shards_per_client"),
        "num_classes": _positive_int("federation.num_classes"),
        "examples_per_class": _positive_int("federation.examples_per_class"),
        "feature_dim": _positive_int("federation.feature_dim"),
        "cluster_spread": And(Use(float), lambda v: v >= 0.0, error="federation.cluster_spread must be >= 0"),
        "partition": And(str, lambda v: v == "shards" or _GROUPS_PATTERN.match(v) is not None,
                         error="federation.partition must be 'shards' or 'groups:<c,c|c|...>'"),
        "idx_images": _optional_path("federation.idx_images"),
        "idx_labels": _optional_path("federation.idx_labels"),
    }),
    "training": Schema({
        "epochs": _positive_int("training.epochs"),
        "batch_size": Or(FULL_BATCH, _positive_int("training.batch_size"),
                         error=f"training.batch_size must be '{FULL_BATCH}' or a positive integer"),
        "learning_rate": And(Use(float), lambda v: v > 0.0, error="training.learning_rate must be positive"),
    }),
}


def read_config_file(path: p.Path) -> SettingsDict:
    """
    INIファイルを文字列の辞書として読む
    Args:
        path(pathlib.Path): 設定ファイル

    Returns:
        セクション -> キー -> 値(SettingsDict)

    Raises:
        ConfigError: ファイルがない、または書式が不正
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        with open(path, "r") as f:
            parser.read_file(f)
    except OSError:
        raise ConfigError(f"config file {path} cannot be read (module {__name__}).")
    except configparser.Error as e:
        raise ConfigError(f"config file {path} is malformed: {e} (module {__name__}).")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def merge_settings(*layers: Mapping[str, Mapping[str, str]]) -> SettingsDict:
    """
    後のレイヤーほど優先してマージする。未知のセクション・キーはエラー。
    Raises:
        ConfigError: 未知のセクションまたはキー
    """
    merged: SettingsDict = {section: dict(keys) for section, keys in DEFAULTS.items()}
    for layer in layers:
        for section, keys in layer.items():
            if section not in merged:
                raise ConfigError(f"unknown section [{section}] (module {__name__}).")
            for key, value in keys.items():
                if key not in merged[section]:
                    raise ConfigError(f"unknown key {section}.{key} (module {__name__}).")
                merged[section][key] = str(value).strip()
    return merged


def config_dict2config(settings: Mapping[str, Mapping[str, str]]) -> ExperimentConfig:
    """
    マージ済みの設定辞書を検証して設定クラスに格納
    Args:
        settings(Mapping[str, Mapping[str, str]]): マージ済み設定

    Returns:
        実験設定(ExperimentConfig)

    Raises:
        ConfigError: 不正な値(メッセージに section.key を含む)
    """
    values: Dict[str, Dict[str, Any]] = {}
    for section, schema in _SCHEMAS.items():
        try:
            values[section] = schema.validate(dict(settings[section]))
        except SchemaError as e:
            raise ConfigError(f"{e.code.splitlines()[-1]} (module {__name__}).")
    config = ExperimentConfig(experiment=ExperimentSettings(**values["experiment"]),
                              fedfv=FedFVSettings(**values["fedfv"]),
                              model=ModelSettings(**values["model"]),
                              federation=FederationSettings(**values["federation"]),
                              training=TrainingSettings(**values["training"]))
    _check_consistency(config)
    return config


def _check_consistency(config: ExperimentConfig) -> None:
    federation: FederationSettings = config.federation
    if config.sample_count > federation.num_clients:
        raise ConfigError(f"fedfv.sample_count {config.sample_count} exceeds federation.num_clients"
                          f" {federation.num_clients} (module {__name__}).")
    if (federation.idx_images is None) != (federation.idx_labels is None):
        raise ConfigError(f"federation.idx_images and federation.idx_labels must be given together"
                          f" (module {__name__}).")
    groups = federation.groups
    if groups is not None:
        if len(groups) != federation.num_clients:
            raise ConfigError(f"federation.partition lists {len(groups)} groups for"
                              f" {federation.num_clients} clients (module {__name__}).")
        if federation.idx_images is None and max(max(group) for group in groups) >= federation.num_classes:
            raise ConfigError(f"federation.partition names a class outside [0, {federation.num_classes})"
                              f" (module {__name__}).")
    elif federation.idx_images is None:
        total: int = federation.num_clients * federation.shards_per_client
        shard_size: int = federation.num_classes * federation.examples_per_class // total
        if shard_size * federation.shards_per_client < 2:
            raise ConfigError(f"federation.examples_per_class is too small for"
                              f" {total} shards; every client needs at least 2 examples (module {__name__}).")
    if config.model.kind == MLP2 and config.model.hidden_dim < 1:
        raise ConfigError(f"model.hidden_dim must be positive for {MLP2} (module {__name__}).")


def _value2string(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def config2dict(config: ExperimentConfig) -> SettingsDict:
    """
    設定クラスを、読み直すと同じ設定になる文字列の辞書にする
    """
    return {section.name: {key: _value2string(value)
                           for key, value in dataclasses.asdict(getattr(config, section.name)).items()}
            for section in dataclasses.fields(config)}


def read_config(path: Optional[p.Path] = None,
                overrides: Optional[Mapping[str, Mapping[str, str]]] = None) -> ExperimentConfig:
    """
    既定値、設定ファイル、コマンドラインの順に重ねた設定を読む
    Args:
        path(Optional[pathlib.Path]): 設定ファイル。Noneなら既定値のみ
        overrides(Optional[Mapping[str, Mapping[str, str]]]): コマンドラインからの上書き

    Returns:
        実験設定(ExperimentConfig)

    Raises:
        ConfigError: 設定の誤り
    """
    layers = [read_config_file(path)] if path is not None else []
    return config_dict2config(merge_settings(*layers, overrides or {}))


def write_effective_config(config: ExperimentConfig, path: p.Path) -> None:
    """
    実効設定をINIファイルに書き出す
    Raises:
        ConfigError: 書き込み失敗
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(config2dict(config))
    try:
        with open(path, "w") as f:
            parser.write(f)
    except OSError:
        raise ConfigError(f"effective config {path} cannot be written (module {__name__}).")
