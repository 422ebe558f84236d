"""Experiment manifest: a strict JSON description of the condition grid.

Example::

    {
      "seed": 7, "K": 10, "R": 100,
      "datasets": [
        {"name": "mag-lcmv", "modality": "MAG", "localization": "LCMV",
         "features": "mag_lcmv_features.csv", "covariates": "covariates.csv",
         "labels": "labels.csv"}
      ],
      "grid": {"classifiers": ["GLMNET"], "sensors": ["MAG"],
               "corrections": ["none", "residuals"], "localizations": ["LCMV"]}
    }

Relative paths resolve against the manifest's directory.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from mci_biomarkers.classifiers import CLASSIFIER_KINDS, ClassifierSpec
from mci_biomarkers.cv import DEFAULT_K, DEFAULT_R, RunConfig
from mci_biomarkers.dataset import MODALITIES, CombinationMode
from mci_biomarkers.errors import ValidationError
from mci_biomarkers.harmonize import CORRECTION_MODES, DEFAULT_GROUPS, MEG_GROUP, MRI_GROUP, HarmonizationGroup
from mci_biomarkers.relieff import DEFAULT_NEIGHBORS

MEG_MODALITIES = ('MAG', 'GRAD')
SENSOR_MODES = {'MAG': CombinationMode.MAG_ONLY, 'GRAD': CombinationMode.GRAD_ONLY}
NO_LOCALIZATION = ''

_TOP_KEYS = {'seed', 'K', 'R', 'output_dir', 'datasets', 'grid', 'harmonization',
             'classifier_options', 'ffsel', 'relieff', 'site_levels'}
_DATASET_KEYS = {'name', 'modality', 'localization', 'features', 'covariates', 'labels', 'columns'}
_GRID_KEYS = {'classifiers', 'sensors', 'modes', 'corrections', 'localizations'}
_GROUP_KEYS = {'covariates', 'degree', 'interactions'}
_RELIEFF_KEYS = {'J', 'L'}


def _check_keys(data, allowed: set, required: set, where: str) -> dict:
    if not isinstance(data, dict):
        raise ValidationError(f"{where}: expected an object")
    for key in sorted(data):
        if key not in allowed:
            raise ValidationError(f"unknown key {where}.{key}" if where else f"unknown key {key!r}")
    for key in sorted(required):
        if key not in data:
            raise ValidationError(f"missing required key {where}.{key}" if where else f"missing required key {key!r}")
    return data


def _str_list(value, where: str, allowed=None) -> tuple[str, ...]:
    if not isinstance(value, list) or not value or not all(isinstance(v, str) for v in value):
        raise ValidationError(f"{where}: expected a non-empty list of strings")
    if allowed is not None:
        for v in value:
            if v not in allowed:
                raise ValidationError(f"{where}: unknown value {v!r} (expected one of {', '.join(allowed)})")
    return tuple(dict.fromkeys(value))


def _int(value, where: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ValidationError(f"{where}: expected an integer >= {minimum}, got {value!r}")
    return value


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    modality: str
    localization: str
    features: Path
    covariates: Path
    labels: Path
    columns: Path | None = None

    def paths(self) -> list[Path]:
        """Every input file, including an auto-discovered column sidecar."""
        columns = self.columns
        if columns is None:
            sidecar = self.features.with_suffix('.columns.json')
            columns = sidecar if sidecar.exists() else None
        return [p for p in (self.features, self.covariates, self.labels, columns) if p is not None]


@dataclass(frozen=True)
class GridCell:
    classifier: str
    combination: str
    correction: str
    localization: str

    @property
    def sensor(self) -> str:
        mode = CombinationMode(self.combination)
        return '+'.join(m for m in mode.modalities if m in MEG_MODALITIES)


@dataclass(frozen=True)
class ExperimentManifest:
    path: Path
    seed: int
    datasets: tuple[DatasetEntry, ...]
    classifiers: tuple[str, ...]
    combinations: tuple[str, ...]
    corrections: tuple[str, ...]
    localizations: tuple[str, ...]
    K: int = DEFAULT_K
    R: int = DEFAULT_R
    output_dir: Path | None = None
    groups: tuple[HarmonizationGroup, ...] = DEFAULT_GROUPS
    classifier_options: dict = field(default_factory=dict)
    ffsel: dict = field(default_factory=dict)
    relieff_J: int = DEFAULT_NEIGHBORS
    relieff_L: int | None = None
    site_levels: tuple[str, ...] | None = None

    def cells(self) -> list[GridCell]:
        """All grid cells in manifest order; MRI-only cells carry no localization."""
        out = []
        for kind in self.classifiers:
            for combination in self.combinations:
                uses_meg = any(m in MEG_MODALITIES for m in CombinationMode(combination).modalities)
                locs = self.localizations if uses_meg else (NO_LOCALIZATION,)
                for correction in self.corrections:
                    for loc in locs:
                        cell = GridCell(kind, combination, correction, loc)
                        if cell not in out:
                            out.append(cell)
        return out

    def datasets_for(self, cell: GridCell) -> list[DatasetEntry]:
        picked = []
        for modality in CombinationMode(cell.combination).modalities:
            if modality in MEG_MODALITIES:
                found = [d for d in self.datasets
                         if d.modality == modality and d.localization == cell.localization]
                what = f"{modality} dataset with localization {cell.localization!r}"
            else:
                found = [d for d in self.datasets if d.modality == modality]
                what = f"{modality} dataset"
            if not found:
                raise ValidationError(f"no {what} for grid cell {cell.classifier}/{cell.combination}")
            if len(found) > 1:
                raise ValidationError(f"more than one {what}: {', '.join(d.name for d in found)}")
            picked.append(found[0])
        return picked

    def run_config(self, cell: GridCell, seed: int | None = None) -> RunConfig:
        spec = ClassifierSpec.from_options(cell.classifier, self.classifier_options.get(cell.classifier))
        return RunConfig(
            classifier=spec,
            combination=cell.combination,
            correction=cell.correction,
            groups=self.groups,
            sensor=cell.sensor,
            localization=cell.localization,
            ffsel=bool(self.ffsel.get(cell.classifier, False)),
            K=self.K,
            R=self.R,
            seed=self.seed if seed is None else seed,
            relieff_J=self.relieff_J,
            relieff_L=self.relieff_L,
        )


def _parse_dataset(item, i: int, base: Path) -> DatasetEntry:
    where = f"datasets[{i}]"
    _check_keys(item, _DATASET_KEYS, {'name', 'modality', 'features', 'covariates', 'labels'}, where)
    if item['modality'] not in MODALITIES:
        raise ValidationError(f"{where}.modality: unknown modality {item['modality']!r}")
    loc = item.get('localization') or NO_LOCALIZATION
    if item['modality'] in MEG_MODALITIES and loc == NO_LOCALIZATION:
        loc = 'Sensor'
    for key in ('name', 'features', 'covariates', 'labels'):
        if not isinstance(item[key], str) or not item[key]:
            raise ValidationError(f"{where}.{key}: expected a non-empty string")
    columns = item.get('columns')
    return DatasetEntry(
        name=item['name'],
        modality=item['modality'],
        localization=loc,
        features=base / item['features'],
        covariates=base / item['covariates'],
        labels=base / item['labels'],
        columns=None if columns is None else base / columns,
    )


def _parse_groups(data) -> tuple[HarmonizationGroup, ...]:
    _check_keys(data, {'MEG', 'MRI'}, set(), 'harmonization')
    groups = []
    for name, default in (('MEG', MEG_GROUP), ('MRI', MRI_GROUP)):
        section = data.get(name)
        if section is None:
            groups.append(default)
            continue
        where = f"harmonization.{name}"
        _check_keys(section, _GROUP_KEYS, set(), where)
        covariates = default.covariates
        if 'covariates' in section:
            covariates = _str_list(section['covariates'], f"{where}.covariates",
                                   ('age', 'sex', 'site', 'tiv', 'movement'))
        interactions = section.get('interactions', default.interactions)
        if not isinstance(interactions, bool):
            raise ValidationError(f"{where}.interactions: expected true or false")
        groups.append(HarmonizationGroup(
            default.modalities,
            covariates,
            _int(section.get('degree', default.degree), f"{where}.degree", 1),
            interactions,
        ))
    return tuple(groups)


def parse_manifest(path) -> ExperimentManifest:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except OSError as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path} is not valid JSON: {exc}") from exc
    return manifest_from_dict(data, path)


def manifest_from_dict(data, path: Path) -> ExperimentManifest:
    base = path.parent
    _check_keys(data, _TOP_KEYS, {'seed', 'datasets', 'grid'}, '')
    seed = _int(data['seed'], 'seed', 0)
    K = _int(data.get('K', DEFAULT_K), 'K', 3)
    R = _int(data.get('R', DEFAULT_R), 'R', 1)

    if not isinstance(data['datasets'], list) or not data['datasets']:
        raise ValidationError("datasets: expected a non-empty list")
    datasets = tuple(_parse_dataset(item, i, base) for i, item in enumerate(data['datasets']))
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ValidationError("datasets: dataset names must be unique")

    grid = _check_keys(data['grid'], _GRID_KEYS, {'classifiers', 'corrections'}, 'grid')
    classifiers = _str_list(grid['classifiers'], 'grid.classifiers', CLASSIFIER_KINDS)
    corrections = _str_list(grid['corrections'], 'grid.corrections', CORRECTION_MODES)
    combinations = []
    if 'sensors' in grid:
        combinations += [SENSOR_MODES[s].value for s in _str_list(grid['sensors'], 'grid.sensors', MEG_MODALITIES)]
    if 'modes' in grid:
        combinations += list(_str_list(grid['modes'], 'grid.modes', [m.value for m in CombinationMode]))
    if not combinations:
        raise ValidationError("grid: give at least one of grid.sensors or grid.modes")
    combinations = tuple(dict.fromkeys(combinations))
    localizations = _str_list(grid.get('localizations', ['Sensor']), 'grid.localizations')

    options = data.get('classifier_options', {})
    _check_keys(options, set(CLASSIFIER_KINDS), set(), 'classifier_options')
    for kind, opts in options.items():
        try:
            ClassifierSpec.from_options(kind, opts)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"classifier_options.{kind}: {exc}") from exc

    ffsel = data.get('ffsel', {})
    _check_keys(ffsel, set(CLASSIFIER_KINDS), set(), 'ffsel')
    for kind, flag in ffsel.items():
        if not isinstance(flag, bool):
            raise ValidationError(f"ffsel.{kind}: expected true or false")

    relieff = _check_keys(data.get('relieff', {}), _RELIEFF_KEYS, set(), 'relieff')
    relieff_J = _int(relieff.get('J', DEFAULT_NEIGHBORS), 'relieff.J', 1)
    relieff_L = relieff.get('L')
    if relieff_L is not None:
        relieff_L = _int(relieff_L, 'relieff.L', 1)

    site_levels = data.get('site_levels')
    if site_levels is not None:
        site_levels = _str_list(site_levels, 'site_levels')

    output_dir = data.get('output_dir')
    if output_dir is not None:
        if not isinstance(output_dir, str) or not output_dir:
            raise ValidationError("output_dir: expected a non-empty string")
        output_dir = base / output_dir

    manifest = ExperimentManifest(
        path=path,
        seed=seed,
        datasets=datasets,
        classifiers=classifiers,
        combinations=combinations,
        corrections=corrections,
        localizations=localizations,
        K=K,
        R=R,
        output_dir=output_dir,
        groups=_parse_groups(data.get('harmonization', {})),
        classifier_options={k: dict(v) for k, v in options.items()},
        ffsel=dict(ffsel),
        relieff_J=relieff_J,
        relieff_L=relieff_L,
        site_levels=site_levels,
    )
    for cell in manifest.cells():
        manifest.datasets_for(cell)
    return manifest
