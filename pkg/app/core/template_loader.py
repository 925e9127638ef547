from pathlib import Path
from typing import Dict, Optional

import yaml

CONFIG_DIR = Path(__file__).resolve().parent.parent.parent / "config"


class TemplateLoader:
    """Text templates for the human-readable summaries printed on stdout."""

    def __init__(self, config_dir: Optional[Path] = None, filename: str = "summaries.yaml"):
        self.path = Path(config_dir or CONFIG_DIR) / filename
        self._templates = self._load_templates()

    def _load_templates(self) -> Dict[str, str]:
        try:
            with open(self.path, "r", encoding="utf-8") as file:
                return yaml.safe_load(file) or {}
        except (FileNotFoundError, PermissionError, yaml.YAMLError) as e:
            raise RuntimeError(f"Failed to load templates from {self.path}: {e}")

    def get_template(self, key: str) -> str:
        return self._templates.get(key, "")

    def get_formatted(self, key: str, **kwargs) -> str:
        template = self.get_template(key)
        try:
            return template.format(**kwargs)
        except (KeyError, ValueError) as e:
            raise ValueError(f"Failed to format template '{key}': {e}")
