"""
Flags shared by the simulation commands and their translation into a RunConfig.

Precedence: explicit flag > profile > settings.TRIALSIM.
"""
import json
from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from ...exceptions import ConfigurationError
from ...harness import ALL_MODELS, PROFILES
from ...serializers import RunConfigSerializer, ScenarioOverrideSerializer
from ...trialgen import DESK_SCENARIO_IDS

CONFIG_ERROR = 2
IO_ERROR = 3


def config_error(message):
    return CommandError(message, returncode=CONFIG_ERROR)


def io_error(message):
    return CommandError(message, returncode=IO_ERROR)


def parse_scenarios(text):
    """'desk', 'all', or ids/ranges such as '1,5-8,41'."""
    if text is None:
        return None
    text = text.strip().lower()
    if text == 'desk':
        return list(DESK_SCENARIO_IDS)
    if text == 'all':
        return list(range(1, 73))
    ids = []
    for part in filter(None, (p.strip() for p in text.split(','))):
        try:
            if '-' in part:
                lo, hi = (int(x) for x in part.split('-', 1))
                if lo > hi:
                    raise ValueError
                ids.extend(range(lo, hi + 1))
            else:
                ids.append(int(part))
        except ValueError:
            raise config_error(f"bad scenario selector {part!r}")
    if not ids:
        raise config_error("no scenarios selected")
    return sorted(set(ids))


def parse_models(text):
    if text is None:
        return None
    return [m.strip().upper().replace('-', '_') for m in text.split(',') if m.strip()]


def add_run_arguments(parser):
    parser.add_argument('--profile', choices=sorted(PROFILES), help="desk (default) or full")
    parser.add_argument('--scenarios', help="desk, all, or ids/ranges e.g. 1,5-8,41")
    parser.add_argument('--sims', type=int, help="replicates per scenario")
    parser.add_argument('--models', help=f"comma list out of {','.join(ALL_MODELS)}")
    parser.add_argument('--imputations', type=int, help="imputed copies per replicate")
    parser.add_argument('--seed', type=int)
    parser.add_argument('--threads', type=int, help="worker processes")
    parser.add_argument('--out', help="output directory")
    parser.add_argument('--overrides', help="JSON file with dgm / retain_off_treatment / timepoint overrides")


def load_overrides(path):
    if not path:
        return {}
    try:
        document = json.loads(Path(path).read_text())
    except OSError as exc:
        raise io_error(f"{path}: {exc.strerror or exc}")
    except ValueError as exc:
        raise config_error(f"{path}: not valid JSON ({exc})")
    serializer = ScenarioOverrideSerializer(data=document)
    if not serializer.is_valid():
        raise config_error(f"{path}: {serializer.errors}")
    return serializer.to_overrides()


def build_config(options):
    defaults = settings.TRIALSIM
    data = {
        'profile': options.get('profile') or defaults['PROFILE'],
        'scenarios': parse_scenarios(options.get('scenarios')),
        'n_sims': options.get('sims'),
        'models': parse_models(options.get('models')),
        'imputations': options.get('imputations'),
        'seed': options.get('seed'),
        'threads': options.get('threads'),
        'out_dir': options.get('out'),
    }
    serializer = RunConfigSerializer(data=data)
    if not serializer.is_valid():
        raise config_error(f"invalid configuration: {serializer.errors}")
    base = {
        'seed': defaults['SEED'],
        'threads': defaults['THREADS'],
        'out_dir': defaults['OUT_DIR'],
        'imputations': defaults['IMPUTATIONS'],
    }
    try:
        return serializer.to_config(defaults=base, overrides=load_overrides(options.get('overrides')))
    except ConfigurationError as exc:
        raise config_error(str(exc))
