"""On-disk formats: manifests, matrix CSVs, worlds, plans, ensembles, results.

All formats are line-oriented text chosen for diff-ability.  Grammars are
documented in docs/formats.md.  Matrix files are CSV with columns
``ref_id,i_id,j_id,p,w``; manifests and worlds are JSON documents; plans
and results are commented CSV.  Floats round-trip exactly (shortest repr).
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .bt import PCM
from .datasets import Dataset, EnsembleTable, ReferenceData, dataset_from_world
from .errors import FormatError, ValidationError
from .preference import SIGMA_FLOOR
from .selection import CRITERIA, SelectionPlan
from .uncertainty import SyntheticWorld

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
WORLD_VERSION = 1
PLAN_HEADER = "# pcsample plan v1"
RESULTS_HEADER = "# pcsample results v1"
PCM_COLUMNS = ["ref_id", "i_id", "j_id", "p", "w"]
ENSEMBLE_COLUMNS = ["ref_id", "image_id", "pass", "mu", "sigma"]


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_float(text: str, path, line) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"not a number: {text!r}", path=path, line=line) from None


# ---------------------------------------------------------------------------
# pairwise-comparison matrices


def write_pcm_csv(path, reference_id: str, image_ids, pcm: PCM) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PCM_COLUMNS)
        n = pcm.n
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                writer.writerow(
                    [reference_id, image_ids[i], image_ids[j], _fmt(pcm.p[i, j]), _fmt(pcm.w[i, j])]
                )


def read_pcm_rows(path):
    """Raw (ref_id, i_id, j_id, p, w) tuples with format validation."""
    path = Path(path)
    if not path.exists():
        raise FormatError("file not found", path=path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PCM_COLUMNS:
            raise FormatError(
                f"expected header {','.join(PCM_COLUMNS)!r}, got {header!r}", path=path, line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise FormatError(f"expected 5 fields, got {len(row)}", path=path, line=lineno)
            ref_id, i_id, j_id, p_text, w_text = row
            if i_id == j_id:
                raise FormatError(f"self-pair {i_id!r}", path=path, line=lineno)
            p = _parse_float(p_text, path, lineno)
            w = _parse_float(w_text, path, lineno)
            if not (0.0 <= p <= 1.0):
                raise FormatError(f"preference {p!r} outside [0, 1]", path=path, line=lineno)
            if w < 0.0:
                raise FormatError(f"negative weight {w!r}", path=path, line=lineno)
            rows.append((ref_id, i_id, j_id, p, w, lineno))
    return rows


def _assemble_pcm(path, reference_id, image_ids, rows) -> PCM:
    index = {img: k for k, img in enumerate(image_ids)}
    n = len(image_ids)
    p = np.full((n, n), 0.5)
    w = np.zeros((n, n))
    seen = {}
    for ref_id, i_id, j_id, pv, wv, lineno in rows:
        if ref_id != reference_id:
            raise FormatError(
                f"row for reference {ref_id!r} in matrix of {reference_id!r}",
                path=path,
                line=lineno,
            )
        if i_id not in index or j_id not in index:
            missing = i_id if i_id not in index else j_id
            raise FormatError(f"unknown image id {missing!r}", path=path, line=lineno)
        i, j = index[i_id], index[j_id]
        if (i, j) in seen:
            raise FormatError(f"duplicate entry ({i_id}, {j_id})", path=path, line=lineno)
        seen[(i, j)] = lineno
        p[i, j] = pv
        w[i, j] = wv
    for i in range(n):
        for j in range(n):
            if i != j and (i, j) not in seen:
                raise FormatError(
                    f"missing entry ({image_ids[i]}, {image_ids[j]}); matrix must be square",
                    path=path,
                )
    comp = np.abs(p + p.T - 1.0)
    off = ~np.eye(n, dtype=bool)
    if np.any(comp[off] > 1e-9):
        i, j = np.unravel_index(np.argmax(comp * off), comp.shape)
        raise FormatError(
            f"complement violation for ({image_ids[i]}, {image_ids[j]}): "
            f"p={p[i, j]!r} vs p={p[j, i]!r} (line {seen[(i, j)]})",
            path=path,
        )
    if np.any(np.abs(w - w.T) > 1e-12):
        raise FormatError("weights are not symmetric", path=path)
    try:
        return PCM(p=p, w=w)
    except ValidationError as exc:
        raise FormatError(str(exc), path=path) from exc


def read_pcm_csv(path, reference_id: str, image_ids) -> PCM:
    return _assemble_pcm(Path(path), reference_id, image_ids, read_pcm_rows(path))


def read_sparse_pcm_csv(path):
    """Group a matrix file by reference; missing cells get weight 0.

    Used by ``aggregate`` so exported judgment fragments (which only hold
    the plan's pairs) can be scored directly.
    """
    path = Path(path)
    rows = read_pcm_rows(path)
    if not rows:
        raise FormatError("no data rows", path=path)
    by_ref = {}
    for row in rows:
        by_ref.setdefault(row[0], []).append(row)
    out = {}
    for ref_id in sorted(by_ref):
        ids = sorted({r[1] for r in by_ref[ref_id]} | {r[2] for r in by_ref[ref_id]})
        index = {img: k for k, img in enumerate(ids)}
        n = len(ids)
        p = np.full((n, n), 0.5)
        w = np.zeros((n, n))
        for _, i_id, j_id, pv, wv, lineno in by_ref[ref_id]:
            i, j = index[i_id], index[j_id]
            p[i, j] = pv
            w[i, j] = wv
        comp = np.abs(p + p.T - 1.0)
        off = ~np.eye(n, dtype=bool)
        filled = (w > 0) & (w.T > 0)
        if np.any((comp > 1e-9) & off & filled):
            i, j = np.unravel_index(np.argmax(comp * (off & filled)), comp.shape)
            raise FormatError(
                f"complement violation for ({ids[i]}, {ids[j]}) in {ref_id!r}",
                path=path,
            )
        # One-sided rows imply their complement.
        one_sided = (w > 0) & (w.T == 0)
        p[one_sided.T] = (1.0 - p.T)[one_sided.T]
        w_sym = np.maximum(w, w.T)
        out[ref_id] = (tuple(ids), PCM(p=p, w=w_sym))
    return out


# ---------------------------------------------------------------------------
# synthetic worlds


def write_world_json(path, world: SyntheticWorld) -> None:
    doc = {
        "format_version": WORLD_VERSION,
        "seed": world.seed,
        "noise_mu": world.noise_mu,
        "noise_sigma": world.noise_sigma,
        "noise_pass": world.noise_pass,
        "references": [
            {
                "id": ref.reference_id,
                "images": [
                    {"id": img, "mu": float(ref.mu_star[k]), "sigma": float(ref.sigma_star[k])}
                    for k, img in enumerate(ref.image_ids)
                ],
            }
            for ref in world.references
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_world_json(path) -> SyntheticWorld:
    path = Path(path)
    if not path.exists():
        raise FormatError("file not found", path=path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from exc
    if doc.get("format_version") != WORLD_VERSION:
        raise FormatError(
            f"unsupported world version {doc.get('format_version')!r}", path=path
        )
    try:
        truths = []
        for ref in doc["references"]:
            image_ids = tuple(img["id"] for img in ref["images"])
            mu = [float(img["mu"]) for img in ref["images"]]
            sigma = [float(img["sigma"]) for img in ref["images"]]
            truths.append((ref["id"], image_ids, mu, sigma))
        return SyntheticWorld.from_truth(
            truths,
            noise_mu=float(doc["noise_mu"]),
            noise_sigma=float(doc["noise_sigma"]),
            noise_pass=float(doc["noise_pass"]),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed world document: {exc!r}", path=path) from exc


# ---------------------------------------------------------------------------
# predictor ensembles


def write_ensemble_csv(path, table: EnsembleTable) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ENSEMBLE_COLUMNS)
        for reference_id, image_ids, mus, sigmas in table.entries:
            for k, image_id in enumerate(image_ids):
                for p in range(table.n_passes):
                    writer.writerow(
                        [reference_id, image_id, p, _fmt(mus[p, k]), _fmt(sigmas[p, k])]
                    )


def read_ensemble_csv(path) -> EnsembleTable:
    path = Path(path)
    if not path.exists():
        raise FormatError("file not found", path=path)
    records = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ENSEMBLE_COLUMNS:
            raise FormatError(
                f"expected header {','.join(ENSEMBLE_COLUMNS)!r}, got {header!r}",
                path=path,
                line=1,
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise FormatError(f"expected 5 fields, got {len(row)}", path=path, line=lineno)
            ref_id, image_id, pass_text, mu_text, sigma_text = row
            try:
                pass_index = int(pass_text)
            except ValueError:
                raise FormatError(f"bad pass index {pass_text!r}", path=path, line=lineno) from None
            mu = _parse_float(mu_text, path, lineno)
            sigma = _parse_float(sigma_text, path, lineno)
            if not (np.isfinite(mu) and np.isfinite(sigma)):
                raise FormatError("mu/sigma must be finite", path=path, line=lineno)
            key = (ref_id, image_id)
            if key not in records:
                records[key] = {}
            if pass_index in records[key]:
                raise FormatError(
                    f"duplicate pass {pass_index} for {image_id!r}", path=path, line=lineno
                )
            records[key][pass_index] = (mu, max(sigma, SIGMA_FLOOR))
    if not records:
        raise FormatError("no ensemble records", path=path)
    counts = {len(v) for v in records.values()}
    if len(counts) != 1:
        raise FormatError("pass counts differ between images", path=path)
    n_passes = counts.pop()
    if n_passes < 2:
        raise FormatError(f"need at least 2 passes, got {n_passes}", path=path)
    by_ref = {}
    for (ref_id, image_id), passes in records.items():
        if set(passes) != set(range(n_passes)):
            raise FormatError(
                f"pass indices for {image_id!r} are not dense 0..{n_passes - 1}", path=path
            )
        by_ref.setdefault(ref_id, {})[image_id] = passes
    entries = []
    for ref_id in sorted(by_ref):
        image_ids = tuple(sorted(by_ref[ref_id]))
        mus = np.empty((n_passes, len(image_ids)))
        sigmas = np.empty((n_passes, len(image_ids)))
        for k, image_id in enumerate(image_ids):
            for p in range(n_passes):
                mus[p, k], sigmas[p, k] = by_ref[ref_id][image_id][p]
        entries.append((ref_id, image_ids, mus, sigmas))
    return EnsembleTable(entries=tuple(entries), n_passes=n_passes)


# ---------------------------------------------------------------------------
# datasets


def write_dataset(dataset: Dataset, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "dataset_id": dataset.dataset_id,
        "references": [],
    }
    for ref in dataset.references:
        pcm_name = f"truth_{ref.reference_id}.csv"
        write_pcm_csv(out_dir / pcm_name, ref.reference_id, ref.image_ids, ref.truth)
        manifest["references"].append(
            {
                "id": ref.reference_id,
                "images": list(ref.image_ids),
                "pcm": pcm_name,
                "reference_image": ref.reference_image,
            }
        )
    if dataset.world is not None:
        write_world_json(out_dir / "world.json", dataset.world)
        manifest["world"] = "world.json"
    if dataset.ensemble is not None:
        write_ensemble_csv(out_dir / "ensemble.csv", dataset.ensemble)
        manifest["ensemble"] = "ensemble.csv"
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return out_dir / MANIFEST_NAME


def load_dataset(path) -> Dataset:
    """Load a dataset directory (or manifest path); validates everything.

    Image ids map to dense indices in sorted order, so the index
    assignment is stable for a given manifest.
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.exists():
        raise FormatError("manifest not found", path=manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path=manifest_path, line=exc.lineno) from exc
    if doc.get("format_version") != MANIFEST_VERSION:
        raise FormatError(
            f"unsupported manifest version {doc.get('format_version')!r}", path=manifest_path
        )
    refs_doc = doc.get("references")
    if not refs_doc:
        raise FormatError("manifest lists no references", path=manifest_path)
    root = manifest_path.parent
    references = []
    for entry in sorted(refs_doc, key=lambda e: e.get("id", "")):
        try:
            ref_id = entry["id"]
            images = list(entry["images"])
            pcm_name = entry["pcm"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed reference entry: {exc!r}", path=manifest_path) from exc
        if len(set(images)) != len(images):
            raise FormatError(f"duplicate image ids in {ref_id!r}", path=manifest_path)
        image_ids = tuple(sorted(images))
        truth = read_pcm_csv(root / pcm_name, ref_id, image_ids)
        references.append(
            ReferenceData(
                reference_id=ref_id,
                image_ids=image_ids,
                truth=truth,
                reference_image=entry.get("reference_image", ref_id),
            )
        )
    world = None
    if "world" in doc:
        world = read_world_json(root / doc["world"])
        _check_world_matches(world, references, manifest_path)
    ensemble = None
    if "ensemble" in doc:
        ensemble = read_ensemble_csv(root / doc["ensemble"])
        _check_ensemble_matches(ensemble, references, manifest_path)
    return Dataset(
        dataset_id=doc.get("dataset_id", root.name),
        references=tuple(references),
        world=world,
        ensemble=ensemble,
        root=root,
        judgments=doc.get("judgments"),
    )


def _check_world_matches(world, references, manifest_path):
    world_refs = {r.reference_id: r for r in world.references}
    for ref in references:
        wref = world_refs.get(ref.reference_id)
        if wref is None:
            raise FormatError(
                f"world is missing reference {ref.reference_id!r}", path=manifest_path
            )
        if tuple(wref.image_ids) != ref.image_ids:
            raise FormatError(
                f"world image ids differ from manifest for {ref.reference_id!r}",
                path=manifest_path,
            )


def _check_ensemble_matches(ensemble, references, manifest_path):
    table = {e[0]: e[1] for e in ensemble.entries}
    for ref in references:
        ids = table.get(ref.reference_id)
        if ids is None:
            raise FormatError(
                f"ensemble is missing reference {ref.reference_id!r}", path=manifest_path
            )
        if tuple(ids) != ref.image_ids:
            raise FormatError(
                f"ensemble image ids differ from manifest for {ref.reference_id!r}",
                path=manifest_path,
            )


def generate_dataset(
    out_dir,
    n_refs: int,
    images_per_ref: int,
    seed: int,
    noise_mu: float = 0.6,
    noise_sigma: float = 0.2,
    noise_pass: float = 0.3,
) -> Dataset:
    """Generate a synthetic world, write it as a dataset, and reload it."""
    world = SyntheticWorld.generate(
        n_refs, images_per_ref, noise_mu, noise_sigma, noise_pass, seed
    )
    dataset_id = f"synth-{n_refs}x{images_per_ref}-s{seed}"
    dataset = dataset_from_world(world, dataset_id)
    write_dataset(dataset, out_dir)
    return load_dataset(out_dir)


# ---------------------------------------------------------------------------
# selection plans


def write_selection(plan: SelectionPlan, dataset: Dataset, path) -> None:
    path = Path(path)
    lines = [
        PLAN_HEADER,
        f"# criterion = {plan.criterion}",
        f"# budget = {_fmt(plan.budget_fraction)}",
        f"# seed = {plan.seed if plan.seed is not None else 'none'}",
        ",".join(["ref_id", "i_id", "j_id"]),
    ]
    for ref_id, i, j in plan.selected:
        ref = dataset.reference(ref_id)
        lines.append(f"{ref_id},{ref.image_ids[i]},{ref.image_ids[j]}")
    path.write_text("\n".join(lines) + "\n")


def load_selection(path, dataset: Dataset) -> SelectionPlan:
    path = Path(path)
    if not path.exists():
        raise FormatError("file not found", path=path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != PLAN_HEADER:
        raise FormatError(
            f"plan version mismatch: expected {PLAN_HEADER!r}", path=path, line=1
        )
    meta = {}
    body_start = 1
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
            body_start = lineno
        else:
            break
    header_line = body_start  # zero-based index of the csv header within lines
    if header_line >= len(lines) or lines[header_line] != "ref_id,i_id,j_id":
        raise FormatError("missing plan column header", path=path, line=header_line + 1)
    criterion = meta.get("criterion")
    if criterion not in CRITERIA:
        raise FormatError(f"unknown criterion {criterion!r}", path=path)
    budget = _parse_float(meta.get("budget", ""), path, None)
    seed_text = meta.get("seed", "none")
    seed = None if seed_text == "none" else int(seed_text)
    selected = []
    for lineno, line in enumerate(lines[header_line + 1 :], start=header_line + 2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"expected 3 fields, got {len(parts)}", path=path, line=lineno)
        ref_id, i_id, j_id = parts
        ref = dataset.reference(ref_id)  # raises ValidationError on unknown ref
        i, j = ref.index_of(i_id), ref.index_of(j_id)
        if i >= j:
            raise FormatError(
                f"pair ({i_id}, {j_id}) is not in dense index order", path=path, line=lineno
            )
        selected.append((ref_id, i, j))
    return SelectionPlan(
        criterion=criterion, budget_fraction=budget, selected=tuple(selected), seed=seed
    )


# ---------------------------------------------------------------------------
# experiment results


def _sig6(x: float) -> str:
    return f"{x:.6g}"


def format_results(result) -> str:
    cfg = result.config
    out = io.StringIO()
    out.write(RESULTS_HEADER + "\n")
    out.write(f"# dataset = {result.dataset_id}\n")
    out.write(f"# seed = {cfg.seed}\n")
    out.write(f"# fill = {cfg.fill}\n")
    out.write(f"# subjects = {cfg.subjects}\n")
    out.write(f"# repetitions = {cfg.repetitions}\n")
    out.write(f"# n_passes = {cfg.n_passes}\n")
    out.write(f"# delta = {_sig6(cfg.delta)}\n")
    out.write(f"# criteria = {','.join(cfg.criteria)}\n")
    out.write(f"# budgets = {','.join(_sig6(b) for b in cfg.budgets)}\n")
    out.write(f"# total_pairs = {result.total_pairs}\n")
    out.write(
        "criterion,budget,pairs,trials,plcc_mean,plcc_std,srocc_mean,srocc_std,"
        "rmse_mean,rmse_std,score_std_mean,degenerate_reps\n"
    )
    for cell in sorted(result.cells, key=lambda c: (c.criterion, c.budget)):
        fields = [
            cell.criterion,
            _sig6(cell.budget),
            str(cell.pairs_selected),
            str(cell.trials),
            _sig6(cell.plcc_mean),
            _sig6(cell.plcc_std),
            _sig6(cell.srocc_mean),
            _sig6(cell.srocc_std),
            _sig6(cell.rmse_mean),
            _sig6(cell.rmse_std),
            _sig6(cell.score_std_mean),
            str(cell.degenerate_reps),
        ]
        out.write(",".join(fields) + "\n")
    return out.getvalue()


def write_results(result, path) -> None:
    Path(path).write_text(format_results(result))
