"""
Report templates for netglm.

Handles Jinja2 template loading with user customization support.
Templates found in NETGLM_TEMPLATES_DIR take priority over the packaged
defaults in app/defaults/templates.
"""

import logging
from pathlib import Path
from typing import Any, Optional

from jinja2 import ChoiceLoader, Environment, FileSystemLoader, StrictUndefined

from app import config

logger = logging.getLogger(__name__)

# Directory paths
DEFAULTS_DIR = Path(__file__).parent / "defaults"
DEFAULTS_TEMPLATES_DIR = DEFAULTS_DIR / "templates"

# Jinja2 environment (initialized lazily)
_jinja_env: Optional[Environment] = None


def init_templates(user_dir: Optional[str] = config.TEMPLATES_DIR) -> Environment:
    """
    Initialize the template system.

    Priority: user templates -> default templates. A configured user
    directory that does not exist is skipped with a warning.
    """
    global _jinja_env

    loaders = []
    if user_dir:
        user_path = Path(user_dir)
        if user_path.is_dir():
            loaders.append(FileSystemLoader(str(user_path)))
            logger.debug(f"🎨 User templates: {user_path}")
        else:
            logger.warning(f"⚠️ NETGLM_TEMPLATES_DIR '{user_dir}' is not a directory, using defaults only")

    # Always add defaults as fallback
    loaders.append(FileSystemLoader(str(DEFAULTS_TEMPLATES_DIR)))

    _jinja_env = Environment(
        loader=ChoiceLoader(loaders),
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )
    _jinja_env.filters["fmt"] = _format_number
    return _jinja_env


def _format_number(value: Any, digits: int = 2) -> str:
    """Fixed-point number, or 'n/a' for missing values."""
    try:
        number = float(value)
    except (TypeError, ValueError):
        return "n/a"
    if number != number:
        return "n/a"
    return f"{number:.{digits}f}"


def render_template(template_name: str, **context: Any) -> str:
    """
    Render a Jinja2 template with the given context.

    Args:
        template_name: Name of the template file (e.g., "table_report.md.j2")
        **context: Template variables to pass

    Raises:
        jinja2.TemplateNotFound: If template doesn't exist
    """
    env = _jinja_env if _jinja_env is not None else init_templates()
    return env.get_template(template_name).render(**context)
