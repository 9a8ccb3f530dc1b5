"""
Option groups generated from config dataclasses.

Every field of the config class becomes an option of one click
`OptionGroup`, together with a `--config` JSON file. The wrapped command
callback receives a single merged config object instead of the raw options.
"""
import types

from collections.abc import Callable, Mapping
from dataclasses import fields
from functools import update_wrapper
from typing import Any

import click

from click.core import ParameterSource
from click_option_group import OptionGroup

from twostream.config import ConfigMixin


def _click_type(kind: Any) -> Any:
    if isinstance(kind, types.UnionType):
        kind = next(arg for arg in kind.__args__ if arg is not type(None))
    return {int: click.INT, float: click.FLOAT, str: click.STRING}.get(kind, click.STRING)


def isolate_config_params(
    params: list[tuple[str, Any]], names: set[str]
) -> tuple[dict[str, Any], dict[str, Any]]:
    """Split callback kwargs into (config overrides, remaining kwargs)."""
    overrides = {k: v for k, v in params if k in names}
    rest = {k: v for k, v in params if k not in names}
    return overrides, rest


def config_options(
    cls: type[ConfigMixin],
    title: str,
    dest: str = 'cfg',
    renames: Mapping[str, str] | None = None,
) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    """
    Decorate a command so that `cls` is built from defaults < `--config`
    file < explicit options and handed to the callback as `dest`.

    `renames` maps field names to option names, e.g. lam -> lambda.
    """
    renames = dict(renames or {})
    group = OptionGroup(title, help=f'Overrides for {cls.__name__} values.')
    field_names = {f.name for f in fields(cls)}  # type: ignore[arg-type]

    def decorator(f: Callable[..., Any]) -> Callable[..., Any]:
        def new_func(*args: Any, **kwargs: Any) -> Any:
            path = kwargs.pop('config', None)
            overrides, rest = isolate_config_params(list(kwargs.items()), field_names)
            ctx = click.get_current_context()
            # only values given on the command line override the config file
            overrides = {
                k: v for k, v in overrides.items()
                if ctx.get_parameter_source(k) is not ParameterSource.DEFAULT
            }
            rest[dest] = cls.load(path, overrides)
            return f(*args, **rest)

        new_func = update_wrapper(new_func, f)
        # options apply bottom-up; reversed keeps the dataclass field order in --help
        for fld in reversed(fields(cls)):  # type: ignore[arg-type]
            flag = renames.get(fld.name, fld.name).replace('_', '-')
            description = fld.metadata.get('description', '')
            if fld.type is bool:
                new_func = group.option(
                    f'--{flag}/--no-{flag}', fld.name, default=None, help=description
                )(new_func)
            else:
                new_func = group.option(
                    f'--{flag}', fld.name,
                    type=_click_type(fld.type),
                    default=None,
                    help=f'{description} [default: {fld.default}]',
                )(new_func)
        return group.option(
            '--config',
            type=click.Path(dir_okay=False),
            default=None,
            help=f'JSON file of {cls.__name__} values.',
        )(new_func)

    return decorator
