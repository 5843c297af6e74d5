"""
Run configuration: JSON loading, --set overrides and validation of every
section through Django forms.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from django import forms
from django.conf import settings

from .basechain import FISHER, PROPOSAL_CHOICES, ChainConfig
from .compactness import METRIC_AND_CURVATURE, MODE_CHOICES, CompactnessConfig
from .diagnostics import POST_HOC, PRIOR_CHOICES, ROUTE_CHOICES, UNIFORM, PriorSpec
from .evaluation import TestFunction
from .examples import EXAMPLE_CHOICES, ExampleSpec
from .upsampler import AMBIENT_PROJECTION, BOUNDARY_CHOICES, MINI_MODE_CHOICES, REPLACE_WITH_BASE, UpsampleConfig

CONFIG_VERSION = 1

REFERENCE_CHOICES = [('analytic', 'Quadrature of the exact 1-D density'),
                     ('chain', 'Long Metropolis-Hastings chain'),
                     ('none', 'No reference')]

# Stage ids for seed derivation from the master seed.
STAGE_CHAIN = 0
STAGE_UPSAMPLE = 1
STAGE_REFERENCE = 2


class ConfigError(Exception):
    def __init__(self, message, errors=None):
        self.errors = errors or {}
        super().__init__(message)


class SectionForm(forms.Form):
    """Form over one config section; missing keys fall back to `defaults`."""
    defaults = {}

    def __init__(self, data=None, **kwargs):
        merged = dict(self.get_defaults())
        merged.update(data or {})
        super().__init__(merged, **kwargs)

    def get_defaults(self):
        return self.defaults


class ExampleForm(SectionForm):
    name = forms.ChoiceField(choices=EXAMPLE_CHOICES)
    params = forms.JSONField(required=False)

    def clean_params(self):
        params = self.cleaned_data.get('params') or {}
        if not isinstance(params, dict):
            raise forms.ValidationError("params must be an object")
        return params


class ChainForm(SectionForm):
    defaults = {'n_steps': 40000, 'burn_in': 0, 'thinning': 1, 'proposal_kind': 'isotropic_gaussian', 'n_base': 200}

    n_steps = forms.IntegerField(min_value=2)
    burn_in = forms.IntegerField(min_value=0)
    thinning = forms.IntegerField(min_value=1)
    proposal_scale = forms.JSONField(required=False)
    proposal_kind = forms.ChoiceField(choices=PROPOSAL_CHOICES)
    n_base = forms.IntegerField(min_value=1)
    seed = forms.IntegerField(min_value=0, required=False)

    def clean_proposal_scale(self):
        scale = self.cleaned_data.get('proposal_scale')
        if scale is None:
            return None
        values = np.atleast_1d(np.asarray(scale, dtype=object))
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in values):
            raise forms.ValidationError("proposal_scale must be a positive number or list of positive numbers")
        return scale

    def clean(self):
        cleaned = super().clean()
        n_steps, burn_in = cleaned.get('n_steps'), cleaned.get('burn_in')
        if n_steps is not None and burn_in is not None and burn_in >= n_steps:
            raise forms.ValidationError("burn_in must be smaller than n_steps")
        scale = cleaned.get('proposal_scale')
        if cleaned.get('proposal_kind') == FISHER and scale is not None and np.ndim(scale) > 0:
            raise forms.ValidationError("the fisher proposal takes a single scalar proposal_scale")
        return cleaned


class CompactnessForm(SectionForm):
    epsilon = forms.FloatField()
    mode = forms.ChoiceField(choices=MODE_CHOICES)
    constant_c = forms.FloatField()
    singular_lambda_sq = forms.FloatField(required=False)

    def get_defaults(self):
        return {'epsilon': getattr(settings, 'SAMPLER_DEFAULT_EPSILON', 0.1), 'mode': METRIC_AND_CURVATURE, 'constant_c': 1.0}

    def clean_epsilon(self):
        epsilon = self.cleaned_data['epsilon']
        if not epsilon > 0:
            raise forms.ValidationError("epsilon must be positive")
        return epsilon

    def clean_constant_c(self):
        c = self.cleaned_data['constant_c']
        if not c > 0:
            raise forms.ValidationError("constant_c must be positive")
        return c

    def clean_singular_lambda_sq(self):
        value = self.cleaned_data.get('singular_lambda_sq')
        if value is not None and not value > 0:
            raise forms.ValidationError("singular_lambda_sq must be positive")
        return value


class UpsampleForm(SectionForm):
    defaults = {'m': 100, 'mini_mode': AMBIENT_PROJECTION, 'boundary_policy': REPLACE_WITH_BASE,
                'keep_beta_perp': False}

    m = forms.IntegerField(min_value=1)
    mini_mode = forms.ChoiceField(choices=MINI_MODE_CHOICES)
    boundary_policy = forms.ChoiceField(choices=BOUNDARY_CHOICES)
    keep_beta_perp = forms.BooleanField(required=False)
    seed = forms.IntegerField(min_value=0, required=False)


class EvaluationForm(SectionForm):
    defaults = {'bins': 100, 'test_functions': ['theta0'], 'reference': 'analytic',
                'reference_steps': 100000, 'error_weights': True}

    bins = forms.IntegerField(min_value=1)
    bin_width = forms.FloatField(required=False)
    marginals = forms.JSONField(required=False)
    test_functions = forms.JSONField(required=False)
    reference = forms.ChoiceField(choices=REFERENCE_CHOICES)
    reference_steps = forms.IntegerField(min_value=2)
    error_weights = forms.BooleanField(required=False)

    def clean_bin_width(self):
        width = self.cleaned_data.get('bin_width')
        if width is not None and not width > 0:
            raise forms.ValidationError("bin_width must be positive")
        return width

    def clean_marginals(self):
        marginals = self.cleaned_data.get('marginals')
        if not marginals:
            return []
        if not isinstance(marginals, list) or not all(
                isinstance(m, list) and m and all(isinstance(k, int) and k >= 0 for k in m) for m in marginals):
            raise forms.ValidationError("marginals must be a list of non-empty lists of coordinate indices")
        return [tuple(m) for m in marginals]

    def clean_test_functions(self):
        names = self.cleaned_data.get('test_functions') or []
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise forms.ValidationError("test_functions must be a list of names")
        for name in names:
            try:
                TestFunction.parse(name)
            except Exception as exc:
                raise forms.ValidationError(str(exc))
        return names


class PriorForm(SectionForm):
    defaults = {'kind': UNIFORM, 'route': POST_HOC}

    kind = forms.ChoiceField(choices=PRIOR_CHOICES)
    route = forms.ChoiceField(choices=ROUTE_CHOICES)
    mean = forms.JSONField(required=False)
    cov = forms.JSONField(required=False)
    marginals = forms.JSONField(required=False)

    def clean(self):
        cleaned = super().clean()
        if self.errors:
            return cleaned
        raw = {k: v for k, v in cleaned.items() if v is not None}
        try:
            cleaned['spec'] = PriorSpec.from_config(raw)
        except Exception as exc:
            raise forms.ValidationError(str(exc))
        return cleaned


SECTION_FORMS = {
    'example': ExampleForm,
    'chain': ChainForm,
    'compactness': CompactnessForm,
    'upsample': UpsampleForm,
    'evaluation': EvaluationForm,
    'prior': PriorForm,
}

TOP_LEVEL_KEYS = {'version', 'seed', 'output_dir', 'chain_path', 'description'} | set(SECTION_FORMS)


@dataclass
class EvaluationConfig:
    bins: int = 100
    bin_width: Optional[float] = None
    marginals: List[Tuple[int, ...]] = field(default_factory=list)
    test_functions: List[str] = field(default_factory=lambda: ['theta0'])
    reference: str = 'analytic'
    reference_steps: int = 100000
    error_weights: bool = True


@dataclass
class RunConfig:
    seed: int
    example: ExampleSpec
    chain: ChainConfig
    compactness: CompactnessConfig
    upsample: UpsampleConfig
    evaluation: EvaluationConfig
    prior: Optional[PriorSpec] = None
    output_dir: Optional[str] = None
    chain_path: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)


def stage_seed(master: int, stage: int) -> int:
    """Independent 63-bit seed for one pipeline stage."""
    state = np.random.SeedSequence([master, stage]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        with path.open() as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


def apply_overrides(raw: dict, overrides) -> dict:
    """
    Apply 'a.b.c=value' assignments. Values are parsed as JSON and fall back
    to plain strings.
    """
    out = copy.deepcopy(raw)
    for item in overrides or []:
        key, sep, value = item.partition('=')
        if not sep or not key:
            raise ConfigError(f"override '{item}' is not of the form key.path=value")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        parts = key.split('.')
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override '{item}': '{part}' is not a section")
            node = child
        node[parts[-1]] = parsed
    return out


def _validate_section(name, data):
    form_class = SECTION_FORMS[name]
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be an object", {name: ['not an object']})
    unknown = sorted(set(data) - set(form_class.base_fields))
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {', '.join(unknown)}", {name: unknown})
    form = form_class(data)
    if not form.is_valid():
        errors = {k: [str(e) for e in v] for k, v in form.errors.items()}
        detail = '; '.join(f"{name}.{k}: {' '.join(v)}" for k, v in errors.items())
        raise ConfigError(f"invalid configuration: {detail}", {name: errors})
    return form.cleaned_data


def validate_run_config(raw: dict) -> RunConfig:
    """
    Validate a raw config dict into a RunConfig.

    Raises:
        ConfigError: unknown keys, wrong version or invalid field values.
    """
    unknown = sorted(set(raw) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}", {'__all__': unknown})
    if raw.get('version') != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {raw.get('version')!r}; expected {CONFIG_VERSION}")
    seed = raw.get('seed', 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if 'example' not in raw:
        raise ConfigError("config needs an 'example' section")

    sections = {name: _validate_section(name, raw.get(name)) for name in SECTION_FORMS}
    ex, ch, co, up, ev = (sections[k] for k in ('example', 'chain', 'compactness', 'upsample', 'evaluation'))

    try:
        chain = ChainConfig(
            n_steps=ch['n_steps'], burn_in=ch['burn_in'], thinning=ch['thinning'],
            proposal_scale=ch['proposal_scale'], proposal_kind=ch['proposal_kind'], n_base=ch['n_base'],
            seed=ch['seed'] if ch['seed'] is not None else stage_seed(seed, STAGE_CHAIN),
        )
        compactness = CompactnessConfig(epsilon=co['epsilon'], mode=co['mode'], constant_c=co['constant_c'],
                                        singular_lambda_sq=co['singular_lambda_sq'])
        upsample = UpsampleConfig(
            m=up['m'], mini_mode=up['mini_mode'], boundary_policy=up['boundary_policy'],
            keep_beta_perp=up['keep_beta_perp'],
            seed=up['seed'] if up['seed'] is not None else stage_seed(seed, STAGE_UPSAMPLE),
            workers=int(getattr(settings, 'SAMPLER_WORKERS', 1)),
        )
    except Exception as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc

    evaluation = EvaluationConfig(
        bins=ev['bins'], bin_width=ev['bin_width'], marginals=ev['marginals'],
        test_functions=ev['test_functions'], reference=ev['reference'],
        reference_steps=ev['reference_steps'], error_weights=ev['error_weights'],
    )
    prior = sections['prior']['spec'] if raw.get('prior') is not None else None

    return RunConfig(
        seed=seed,
        example=ExampleSpec(ex['name'], ex['params']),
        chain=chain,
        compactness=compactness,
        upsample=upsample,
        evaluation=evaluation,
        prior=prior,
        output_dir=raw.get('output_dir'),
        chain_path=raw.get('chain_path'),
        raw=copy.deepcopy(raw),
    )
