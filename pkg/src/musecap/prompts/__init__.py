"""Prompt templates shipped with musecap.

Templates are stored verbatim; placeholders are ``{name}`` and are filled in
a single pass, so braces inside substituted values are left alone.
"""

import re
from importlib import resources

from musecap.errors import ValidationError


def load_template(name: str) -> str:
    """Template text without the file's final newline."""
    return resources.files(__package__).joinpath(name).read_text(encoding="utf-8").removesuffix("\n")


def render(template: str, **values: str) -> str:
    """Substitute ``{key}`` for every keyword in one pass.

    Raises:
        ValidationError: If a placeholder named in ``values`` is absent from the template
    """
    absent = [key for key in values if "{" + key + "}" not in template]
    if absent:
        raise ValidationError(f"template has no placeholders {absent}")
    pattern = re.compile(r"\{(" + "|".join(re.escape(key) for key in values) + r")\}")
    return pattern.sub(lambda m: values[m.group(1)], template)
