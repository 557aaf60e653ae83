"""
Evaluator plugins for RankSight

A plugin is a module in plugins/ with a register() function returning
{'name', 'version', 'description', 'evaluators': {name: factory}}. A factory
is called as factory(dataset, with_per_sample) and returns an object with
evaluate(model) -> EvalResult.
"""

import importlib.util
import os

from core.errors import ConfigError
from core.utils import print_info, print_table, print_warning, setup_logging


class PluginManager:
    """Discovers plugins and hands out the evaluators they register"""

    def __init__(self, plugin_dir=None):
        self.plugins = {}
        self.evaluators = {}
        self.plugin_dir = plugin_dir or os.path.join(os.path.dirname(os.path.dirname(__file__)), 'plugins')

    def load_plugins(self):
        """Load every plugin module from the plugin directory"""
        logger = setup_logging()
        if not os.path.isdir(self.plugin_dir):
            logger.warning(f"plugins directory not found: {self.plugin_dir}")
            return

        plugin_files = sorted(f for f in os.listdir(self.plugin_dir) if f.endswith('.py') and not f.startswith('__'))
        for plugin_file in plugin_files:
            plugin_name = plugin_file[:-3]
            plugin_path = os.path.join(self.plugin_dir, plugin_file)
            try:
                spec = importlib.util.spec_from_file_location(f"ranksight_plugin_{plugin_name}", plugin_path)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
            except Exception as e:
                # A broken plugin must not take the others down
                logger.error(f"plugin load error {plugin_name}: {e}")
                continue

            if not hasattr(module, 'register'):
                logger.warning(f"plugin {plugin_name} has no register() function")
                continue
            info = module.register() or {}
            self.plugins[plugin_name] = {'module': module, 'info': info}
            for evaluator_name, factory in info.get('evaluators', {}).items():
                self.evaluators[evaluator_name] = {'factory': factory, 'plugin': plugin_name,
                                                   'description': info.get('description', '')}
            logger.info(f"loaded plugin {plugin_name} with evaluators: {', '.join(info.get('evaluators', {}))}")

    def create_evaluator(self, name, dataset, with_per_sample=False):
        if name not in self.evaluators:
            known = ', '.join(sorted(self.evaluators)) or 'none'
            raise ConfigError(f"unknown plugin evaluator '{name}' (available: {known})")
        setup_logging().info(f"using plugin evaluator {name} from {self.evaluators[name]['plugin']}")
        return self.evaluators[name]['factory'](dataset, with_per_sample)

    def list_plugins(self):
        if not self.plugins:
            print_warning("No plugins loaded")
            return
        table_data = []
        for name, plugin in self.plugins.items():
            info = plugin['info']
            table_data.append({
                'Name': name,
                'Version': info.get('version', 'N/A'),
                'Description': info.get('description', 'N/A'),
                'Evaluators': ', '.join(info.get('evaluators', {}).keys()),
            })
        print_table(table_data, ['Name', 'Version', 'Description', 'Evaluators'], "Loaded Plugins")
        print_info(f"{len(self.plugins)} plugins, {len(self.evaluators)} evaluators")


_plugin_manager = None


def get_plugin_manager():
    global _plugin_manager
    if _plugin_manager is None:
        _plugin_manager = PluginManager()
    return _plugin_manager


def load_plugins():
    """Load plugins into the shared manager once"""
    manager = get_plugin_manager()
    if not manager.plugins:
        manager.load_plugins()
    return manager
