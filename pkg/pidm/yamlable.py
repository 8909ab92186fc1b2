"""
Created on 2026-10-18

@author: wf

YAML/JSON storable dataclasses for run configuration, dataset manifests
and evaluation reports.

The @lod_storable decorator turns a class into a dataclass with
dataclasses_json support and mixes in YamlAble for YAML file I/O.
Loading is strict: unknown keys are rejected via dacite so that a
misspelled configuration field is an error instead of a silent default.
Flat "section.field=value" overrides are applied with type conversion
driven by the dataclass field annotations.
"""

import dataclasses
import typing
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, is_dataclass
from typing import Any, Dict, List, Type, TypeVar

import yaml
from dacite import Config, from_dict
from dacite.exceptions import DaciteError
from dataclasses_json import dataclass_json

T = TypeVar("T")


class ConfigError(ValueError):
    """
    invalid configuration content or override
    """


def lod_storable(cls):
    """
    Decorator to make a class LoDStorable by
    inheriting from YamlAble.
    This decorator also ensures the class is a
    dataclass and has JSON serialization/deserialization
    capabilities.
    """
    cls = dataclass(cls)
    # dataclass_json overwrites to_json/from_json/... unconditionally;
    # keep the methods the class defines itself
    own = {
        name: cls.__dict__[name]
        for name in ("to_json", "from_json", "to_dict", "from_dict", "schema")
        if name in cls.__dict__
    }
    cls = dataclass_json(cls)
    for name, member in own.items():
        setattr(cls, name, member)

    class LoDStorable(YamlAble, cls):
        """
        decorator class
        """

        __qualname__ = cls.__qualname__
        pass

    LoDStorable.__name__ = cls.__name__
    LoDStorable.__doc__ = cls.__doc__

    return LoDStorable


class YamlAble:
    """
    YAML handler for converting dataclass objects to and from YAML format
    and for loading from and saving to files.
    """

    def _yaml_setup(self):
        """
        set up the custom representers
        """
        if not is_dataclass(self):
            raise ValueError("I must be a dataclass instance.")
        if not hasattr(self, "_yaml_dumper"):
            self._yaml_dumper = yaml.Dumper
            self._yaml_dumper.ignore_aliases = lambda *_args: True
            self._yaml_dumper.add_representer(type(None), self.represent_none)
            self._yaml_dumper.add_representer(str, self.represent_literal)

    def represent_none(self, _, __) -> yaml.Node:
        """
        Custom representer for None values.
        """
        return self._yaml_dumper.represent_scalar("tag:yaml.org,2002:null", "")

    def represent_literal(self, dumper: yaml.Dumper, data: str) -> yaml.Node:
        """
        Custom representer for block scalar style for strings.
        """
        if "\n" in data:
            return dumper.represent_scalar("tag:yaml.org,2002:str", data, style="|")
        return dumper.represent_scalar("tag:yaml.org,2002:str", data)

    def to_yaml(
        self,
        ignore_none: bool = True,
        ignore_underscore: bool = True,
        allow_unicode: bool = True,
        sort_keys: bool = False,
    ) -> str:
        """
        Converts this dataclass object to a YAML string.

        Args:
            ignore_none: remove None values from the YAML output.
            ignore_underscore: exclude attributes starting with an underscore.
            allow_unicode: allow unicode characters in the output.
            sort_keys: sort the dictionary keys in the output.

        Returns:
            str: the YAML representation
        """
        obj_dict = asdict(self)
        self._yaml_setup()
        clean_dict = self.remove_ignored_values(
            obj_dict, ignore_none, ignore_underscore
        )
        yaml_str = yaml.dump(
            clean_dict,
            Dumper=self._yaml_dumper,
            default_flow_style=False,
            allow_unicode=allow_unicode,
            sort_keys=sort_keys,
        )
        return yaml_str

    @classmethod
    def from_yaml(cls: Type[T], yaml_str: str) -> T:
        """
        Deserializes a YAML string to a dataclass instance,
        rejecting unknown keys.

        Args:
            yaml_str (str): A string containing YAML formatted data.

        Returns:
            T: An instance of the dataclass.
        """
        data: Dict[str, Any] = yaml.safe_load(yaml_str) or {}
        instance: T = cls.from_dict_strict(data)
        return instance

    @classmethod
    def load_from_yaml_file(cls: Type[T], filename: str) -> T:
        """
        Loads a dataclass instance from a YAML file.

        Args:
            filename (str): The path to the YAML file.

        Returns:
            T: An instance of the dataclass.
        """
        with open(filename, "r") as file:
            yaml_str: str = file.read()
        instance: T = cls.from_yaml(yaml_str)
        return instance

    def save_to_yaml_file(self, filename: str):
        """
        Saves the current dataclass instance to a YAML file.

        Args:
            filename (str): The path where the YAML file will be saved.
        """
        yaml_content: str = self.to_yaml()
        with open(filename, "w") as file:
            file.write(yaml_content)

    @classmethod
    def remove_ignored_values(
        cls,
        value: Any,
        ignore_none: bool = True,
        ignore_underscore: bool = False,
        ignore_empty: bool = True,
    ) -> Any:
        """
        Recursively removes None values, underscore keys and empty
        collections from a dictionary or list.

        Args:
            value: The value to process (dictionary, list, or other).
            ignore_none: remove None values.
            ignore_underscore: remove keys starting with an underscore.
            ignore_empty: remove empty collections.
        """

        def is_valid(v):
            if ignore_none and v is None:
                return False
            if ignore_empty:
                if isinstance(v, Mapping) and not v:
                    return False
                if (
                    isinstance(v, Iterable)
                    and not isinstance(v, (str, bytes))
                    and not v
                ):
                    return False
            return True

        if isinstance(value, Mapping):
            value = {
                k: YamlAble.remove_ignored_values(
                    v, ignore_none, ignore_underscore, ignore_empty
                )
                for k, v in value.items()
                if is_valid(v) and (not ignore_underscore or not k.startswith("_"))
            }
        elif isinstance(value, Iterable) and not isinstance(value, (str, bytes)):
            value = [
                YamlAble.remove_ignored_values(
                    v, ignore_none, ignore_underscore, ignore_empty
                )
                for v in value
                if is_valid(v)
            ]
        return value

    @classmethod
    def from_dict_strict(cls: Type[T], data: dict) -> T:
        """
        Creates an instance from a dictionary, rejecting keys
        that do not name a field.

        Raises:
            ConfigError: for unknown keys or mistyped values
        """
        try:
            instance = from_dict(
                data_class=cls,
                data=data,
                config=Config(strict=True, type_hooks={float: float}),
            )
        except DaciteError as ex:
            raise ConfigError(f"{cls.__name__}: {ex}") from ex
        return instance

    def with_overrides(self: T, overrides: Dict[str, str]) -> T:
        """
        Apply flat overrides to a copy of me.

        Args:
            overrides: mapping of dotted field path (e.g. "model.embed_dim")
                to its string value

        Returns:
            a new instance with the converted values in place

        Raises:
            ConfigError: if a key does not name an existing field
        """
        data = asdict(self)
        for key, raw in overrides.items():
            path = key.split(".")
            owner_cls = type(self)
            target = data
            for part in path[:-1]:
                hints = _field_types(owner_cls)
                if part not in hints or not isinstance(target.get(part), dict):
                    raise ConfigError(f"unknown config section '{part}' in '{key}'")
                owner_cls = _strip_optional(hints[part])
                target = target[part]
            name = path[-1]
            hints = _field_types(owner_cls)
            if name not in hints:
                raise ConfigError(f"unknown config key '{key}'")
            target[name] = convert_value(raw, hints[name], key)
        return type(self).from_dict_strict(data)


def _field_types(cls) -> Dict[str, Any]:
    names = {f.name for f in dataclasses.fields(cls)}
    hints = typing.get_type_hints(cls)
    return {name: hints[name] for name in names}


def _strip_optional(hint):
    if typing.get_origin(hint) is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return hint


def convert_value(raw: str, hint, key: str = "") -> Any:
    """
    convert the string form of an override to the annotated type

    Args:
        raw: the value as given on the command line
        hint: the field's type annotation
        key: the override key for error messages
    """
    optional = typing.get_origin(hint) is typing.Union and type(None) in typing.get_args(hint)
    hint = _strip_optional(hint)
    if optional and raw.lower() in ("none", "null", ""):
        return None
    try:
        if hint is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        origin = typing.get_origin(hint)
        if origin in (list, List):
            (item_type,) = typing.get_args(hint) or (str,)
            return [convert_value(item, item_type, key) for item in raw.split(",") if item]
    except ValueError as ex:
        raise ConfigError(f"invalid value '{raw}' for '{key}'") from ex
    raise ConfigError(f"unsupported override type {hint} for '{key}'")
