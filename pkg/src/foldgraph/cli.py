"""Command-line front end: train, reconstruct, encode, analyze spectra,
sweep filter strength, certify the theory oracles, and classify codes.

Exit codes: 0 success, 1 certification/assertion failure, 2 usage or IO
error.
"""

import argparse
import hashlib
import os
import sys

import numpy as np

from . import graphsignal as gs
from . import network as net
from . import pointcloud as pc
from . import theory
from . import trainer
from .errors import DomainError, FileFormatError

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration plumbing


def parse_config_file(path):
    """Flat UTF-8 "key = value" lines; '#' starts a comment."""
    merged = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise FileFormatError(
                        f"expected 'key = value', got {text!r}", line=lineno
                    )
                key, value = text.split("=", 1)
                merged[key.strip()] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    return merged


_LOSS_ALIASES = {"augcd": "augmented", "cd": "plain"}


def resolve_config(args):
    """Config file first, then command-line flags on top."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(parse_config_file(args.config))
    for key, flag in (
        ("filter", "filter"),
        ("epochs", "epochs"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = str(value)
    loss = getattr(args, "loss", None)
    if loss is not None:
        merged["loss"] = loss
    return merged


def _get(cfg, key, cast, default):
    if key not in cfg:
        return default
    try:
        return cast(cfg[key])
    except ValueError as exc:
        raise UsageError(f"bad config value for {key}: {cfg[key]!r}") from exc


def model_config_from(cfg):
    try:
        return net.ModelConfig(
            code_len=_get(cfg, "code_len", int, 512),
            lattice_side=_get(cfg, "lattice_side", int, 45),
            knn_k=_get(cfg, "knn_k", int, 96),
            sigma=_get(cfg, "sigma", float, 0.08),
            mu=_get(cfg, "mu", float, 0.5),
            filter_kind=cfg.get("filter", "none"),
        )
    except DomainError as exc:
        raise UsageError(str(exc)) from exc


def train_config_from(cfg):
    loss = cfg.get("loss", "augcd")
    if loss not in _LOSS_ALIASES:
        raise UsageError(f"loss must be 'augcd' or 'cd', got {loss!r}")
    try:
        return trainer.TrainConfig(
            lr=_get(cfg, "lr", float, 1e-4),
            batch_size=_get(cfg, "batch_size", int, 32),
            epochs=_get(cfg, "epochs", int, 100),
            seed=_get(cfg, "seed", int, 0),
            loss_kind=_LOSS_ALIASES[loss],
            checkpoint_every=_get(cfg, "checkpoint_every", int, 0),
            clip_norm=_get(cfg, "clip_norm", float, 10.0),
        )
    except DomainError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# datasets


def parse_synthetic_spec(spec):
    """"shape:count:n_points[:params]" entries, comma-separated; params are
    "k=v" pairs, themselves comma-separated.  A comma token containing ':'
    starts the next entry."""
    entries = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            raise UsageError("empty entry in synthetic spec")
        if ":" in token or not entries:
            parts = token.split(":")
            if len(parts) < 3:
                raise UsageError(
                    f"synthetic entry needs shape:count:n_points, got {token!r}"
                )
            shape = parts[0]
            try:
                count = int(parts[1])
                n_points = int(parts[2])
            except ValueError as exc:
                raise UsageError(f"bad counts in {token!r}") from exc
            params = {}
            for extra in parts[3:]:
                params.update(_parse_param(extra))
            entries.append({"shape": shape, "count": count,
                            "n_points": n_points, "params": params})
        else:
            entries[-1]["params"].update(_parse_param(token))
    return entries


def _parse_param(text):
    if "=" not in text:
        raise UsageError(f"synthetic parameter must be k=v, got {text!r}")
    key, value = text.split("=", 1)
    try:
        return {key.strip(): float(value)}
    except ValueError as exc:
        raise UsageError(f"non-numeric parameter {text!r}") from exc


def load_dataset(args):
    """Clouds from --data (directory of .xyz/.ply, sorted by name) or
    --synthetic, normalized into the unit cube."""
    data_dir = getattr(args, "data", None)
    spec = getattr(args, "synthetic", None)
    if (data_dir is None) == (spec is None):
        raise UsageError("exactly one of --data or --synthetic is required")
    clouds = []
    names = []
    if data_dir is not None:
        if not os.path.isdir(data_dir):
            raise UsageError(f"--data directory not found: {data_dir}")
        for fname in sorted(os.listdir(data_dir)):
            path = os.path.join(data_dir, fname)
            if fname.endswith(".xyz"):
                clouds.append(pc.read_xyz(path))
            elif fname.endswith(".ply"):
                clouds.append(pc.read_ply_ascii(path))
            else:
                continue
            names.append(fname)
        if not clouds:
            raise UsageError(f"no .xyz or .ply files under {data_dir}")
    else:
        base_seed = getattr(args, "seed", None) or 0
        index = 0
        for entry in parse_synthetic_spec(spec):
            for rep in range(entry["count"]):
                try:
                    cloud = pc.sample_synthetic(
                        entry["shape"], entry["n_points"],
                        params=entry["params"], seed=1000 * base_seed + index,
                    )
                except DomainError as exc:
                    raise UsageError(str(exc)) from exc
                clouds.append(cloud)
                names.append(f"{entry['shape']}_{index}")
                index += 1
    return [pc.normalize_unit_cube(c) for c in clouds], names


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command, cfg, inputs, outputs):
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w", newline="\n") as fh:
        fh.write(f"command = {command}\n")
        for key in sorted(cfg):
            fh.write(f"{key} = {cfg[key]}\n")
        for item in inputs:
            fh.write(f"input {item}\n")
        for name in outputs:
            full = os.path.join(out_dir, name)
            fh.write(f"output {name} sha256 {sha256_file(full)}\n")
    return path


def _prepare_out(args):
    out_dir = getattr(args, "out", None)
    if not out_dir:
        raise UsageError("--out is required")
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _load_checkpoint_arg(args):
    path = getattr(args, "checkpoint", None)
    if not path:
        raise UsageError("--checkpoint is required")
    if not os.path.isfile(path):
        raise UsageError(f"checkpoint not found: {path}")
    return trainer.load_checkpoint(path)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    out_dir = _prepare_out(args)
    cfg = resolve_config(args)
    model_cfg = model_config_from(cfg)
    train_cfg = train_config_from(cfg)
    dataset, names = load_dataset(args)
    model = net.init_model(model_cfg, seed=train_cfg.seed)
    log_path = os.path.join(out_dir, "train.log")
    if os.path.exists(log_path):
        os.remove(log_path)
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    records = trainer.train(model, dataset, train_cfg,
                            log_path=log_path, checkpoint_path=ckpt_path)
    if records:
        print(f"final epoch {records[-1].epoch} loss {records[-1].loss:.6g}")
    write_manifest(out_dir, "train", cfg, names,
                   ["checkpoint.bin", "train.log"])
    return EXIT_OK


def cmd_reconstruct(args):
    out_dir = _prepare_out(args)
    ckpt = _load_checkpoint_arg(args)
    dataset, names = load_dataset(args)
    outputs = []
    report_lines = []
    for idx, (cloud, name) in enumerate(zip(dataset, names)):
        coarse_t, refined_t, adjacency_t = net.reconstruct(ckpt.model, cloud)
        coarse = pc.PointCloud(coarse_t.values)
        refined = pc.PointCloud(refined_t.values)
        aug, _ = pc.augmented_chamfer(cloud, refined)
        plain = pc.chamfer_plain(cloud, refined)
        report_lines.append(f"{name} augcd {aug:.17g} cd {plain:.17g}")
        if idx == 0:
            pc.write_ply_ascii(os.path.join(out_dir, "coarse.ply"), coarse)
            pc.write_ply_ascii(os.path.join(out_dir, "refined.ply"), refined)
            outputs += ["coarse.ply", "refined.ply"]
            if args.trace_node is not None:
                row = args.trace_node
                weights = adjacency_t.values
                if not 0 <= row < weights.shape[0]:
                    raise UsageError(
                        f"--trace-node {row} out of range for M={weights.shape[0]}"
                    )
                traced = pc.PointCloud(refined.points, scalar=weights[row])
                pc.write_ply_ascii(os.path.join(out_dir, "trace.ply"), traced)
                outputs.append("trace.ply")
    report_path = os.path.join(out_dir, "distances.txt")
    with open(report_path, "w", newline="\n") as fh:
        fh.write("\n".join(report_lines) + "\n")
    outputs.append("distances.txt")
    print("\n".join(report_lines))
    write_manifest(out_dir, "reconstruct", resolve_config(args), names, outputs)
    return EXIT_OK


def cmd_encode(args):
    out_dir = _prepare_out(args)
    ckpt = _load_checkpoint_arg(args)
    dataset, names = load_dataset(args)
    path = os.path.join(out_dir, "codes.txt")
    with open(path, "w", newline="\n") as fh:
        for cloud in dataset:
            code = net.encode(ckpt.model, cloud).values[0]
            fh.write(" ".join(f"{v:.17g}" for v in code) + "\n")
    write_manifest(out_dir, "encode", resolve_config(args), names, ["codes.txt"])
    return EXIT_OK


def cmd_spectra(args):
    out_dir = _prepare_out(args)
    ckpt = _load_checkpoint_arg(args)
    dataset, names = load_dataset(args)
    cloud = dataset[0]
    code = net.encode(ckpt.model, cloud)
    adjacency = net.infer_topology(ckpt.model, code).values
    lap = gs.laplacian(gs.GraphAdjacency(adjacency))
    spectrum = gs.eig_symmetric(lap)
    gs.export_spectrum(os.path.join(out_dir, "spectrum.txt"), spectrum)
    refined = net.reconstruct(ckpt.model, cloud)[1].values
    outputs = ["spectrum.txt"]
    for i in range(min(4, spectrum.eigenvectors.shape[1])):
        colored = pc.PointCloud(refined, scalar=spectrum.eigenvectors[:, i])
        name = f"eigvec_{i + 1}.ply"
        pc.write_ply_ascii(os.path.join(out_dir, name), colored)
        outputs.append(name)
    v, lam = spectrum.eigenvectors, spectrum.eigenvalues
    residual = np.linalg.norm(v @ np.diag(lam) @ v.T - lap)
    print(f"lambda_1 {lam[0]:.17g}")
    print(f"eigendecomposition residual {residual:.17g}")
    write_manifest(out_dir, "spectra", resolve_config(args), names, outputs)
    return EXIT_OK


ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


def cmd_alpha_sweep(args):
    out_dir = _prepare_out(args)
    ckpt = _load_checkpoint_arg(args)
    dataset, names = load_dataset(args)
    cloud = dataset[0]
    model = ckpt.model
    kind = model.config.filter_kind
    if kind == "none":
        raise UsageError("alpha-sweep needs a checkpoint trained with a filter")
    code = net.encode(model, cloud)
    coarse = net.fold(model, code).values
    adjacency = gs.GraphAdjacency(net.infer_topology(model, code).values)
    outputs = []
    table = []
    for alpha in ALPHAS:
        if alpha == 0.0:
            filtered = coarse
        elif kind == "adjacency":
            filtered = gs.alpha_filter_adjacency(adjacency, coarse, alpha)
        elif alpha == 0.5:
            # matches the solve-based reconstruction path bitwise
            filtered = gs.laplacian_filter(adjacency, coarse, model.config.mu)
        else:
            filtered = gs.alpha_filter_laplacian(
                adjacency, coarse, model.config.mu, alpha
            )
        name = f"alpha_{alpha:g}.ply"
        pc.write_ply_ascii(os.path.join(out_dir, name), pc.PointCloud(filtered))
        aug, _ = pc.augmented_chamfer(cloud, pc.PointCloud(filtered))
        table.append(f"alpha {alpha:g} augcd {aug:.17g}")
        outputs.append(name)
    with open(os.path.join(out_dir, "alpha_table.txt"), "w", newline="\n") as fh:
        fh.write("\n".join(table) + "\n")
    outputs.append("alpha_table.txt")
    print("\n".join(table))
    write_manifest(out_dir, "alpha-sweep", resolve_config(args), names, outputs)
    return EXIT_OK


def cmd_certify(args):
    out_dir = _prepare_out(args)
    rng = np.random.default_rng(args.seed or 0)
    lines = []
    all_pass = True

    for k in range(1, 7):
        cloud = pc.PointCloud(rng.uniform(0.0, 1.0, (100, 3)))
        cert = theory.certify_thm1(cloud, k ** 3, corner_mode=args.corner_mode)
        lines.append(theory.format_certificate(cert))
        all_pass &= cert.passed

    for k in (2, 4, 6):
        grid = np.zeros((k, k, k), dtype=np.int64)
        grid[: max(2, k // 2), :, :] = 1  # a thick slab
        centers = (np.argwhere(grid) + 0.5) / k
        cert = theory.certify_thm2(pc.PointCloud(centers), k)
        lines.append(theory.format_certificate(cert))
        all_pass &= cert.passed

    for _ in range(20):
        m = int(rng.integers(3, 17))
        # raises if the fixed-point residual or variation check fails
        theory.solve_zero_tv(rng.standard_normal(m), rng.standard_normal(m))
    a = theory.solve_zero_tv(theory.Z_X1, theory.Z_X2)
    res = max(
        np.linalg.norm(a.weights @ theory.Z_X1 - theory.Z_X1),
        np.linalg.norm(a.weights @ theory.Z_X2 - theory.Z_X2),
    )
    ok3 = res < 1e-10
    lines.append(
        f"theorem 3 K 0 C 0 distance {res:.17g} bound 1e-10 "
        f"{'PASS' if ok3 else 'FAIL'}"
    )
    all_pass &= ok3

    worst_margin = -np.inf
    violations = 0
    for trial in range(50):
        m = int(rng.integers(3, 13))
        sym = _random_symmetric_stochastic(rng, m)
        report = theory.check_tv_decrease(sym, trials=10, seed=trial)
        violations += report.violations
        worst_margin = max(worst_margin, report.worst_margin)
    ok4 = violations == 0
    lines.append(
        f"theorem 4 K 0 C 0 distance {worst_margin:.17g} bound 1e-10 "
        f"{'PASS' if ok4 else 'FAIL'}"
    )
    all_pass &= ok4

    with open(os.path.join(out_dir, "certificates.txt"), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    write_manifest(out_dir, "certify", resolve_config(args), [],
                   ["certificates.txt"])
    return EXIT_OK if all_pass else EXIT_FAIL


def _random_symmetric_stochastic(rng, m):
    """Symmetric row-stochastic adjacency: symmetrized doubly-stochastic
    mixture of permutation-like averaging with the identity."""
    w = rng.uniform(0.0, 1.0, (m, m))
    w = 0.5 * (w + w.T)
    # Sinkhorn-style balancing toward doubly stochastic, then symmetrize.
    for _ in range(200):
        w /= w.sum(axis=1, keepdims=True)
        w = 0.5 * (w + w.T)
    w /= w.sum(axis=1, keepdims=True)
    w = 0.5 * (w + w.T)
    return gs.GraphAdjacency(w)


def _read_matrix(path, what):
    try:
        rows = []
        with open(path) as fh:
            for line in fh:
                text = line.strip()
                if text:
                    rows.append([float(t) for t in text.split()])
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {what} from {path}: {exc}") from exc
    if not rows:
        raise UsageError(f"empty {what} file: {path}")
    return np.array(rows)


def cmd_classify(args):
    train_codes = _read_matrix(args.train_codes, "training codes")
    train_labels = _read_matrix(args.train_labels, "training labels").ravel()
    if train_codes.shape[0] != train_labels.shape[0]:
        raise UsageError(
            f"{train_codes.shape[0]} training codes but "
            f"{train_labels.shape[0]} labels"
        )
    try:
        clf = trainer.fit_classifier(
            train_codes, train_labels.astype(int),
            epochs=args.epochs or 500, seed=args.seed or 0,
        )
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    train_acc = float(
        (trainer.classify(clf, train_codes) == train_labels.astype(int)).mean()
    )
    print(f"train accuracy {train_acc:.6g}")
    if args.test_codes:
        if not args.test_labels:
            raise UsageError("--test-codes requires --test-labels")
        test_codes = _read_matrix(args.test_codes, "test codes")
        test_labels = _read_matrix(args.test_labels, "test labels").ravel()
        if test_codes.shape[0] != test_labels.shape[0]:
            raise UsageError(
                f"{test_codes.shape[0]} test codes but "
                f"{test_labels.shape[0]} labels"
            )
        test_acc = float(
            (trainer.classify(clf, test_codes) == test_labels.astype(int)).mean()
        )
        print(f"test accuracy {test_acc:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="foldgraph",
        description="Point-cloud autoencoder with graph-filtered folding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common_data(p):
        p.add_argument("--data", help="directory of .xyz/.ply clouds")
        p.add_argument("--synthetic",
                       help="shape:count:n_points[:k=v,...] entries, comma-separated")
        p.add_argument("--seed", type=int)
        p.add_argument("--config", help="flat 'key = value' config file")
        p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit the autoencoder")
    common_data(p)
    p.add_argument("--filter", choices=net.FILTER_KINDS)
    p.add_argument("--loss", choices=("augcd", "cd"))
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="decode clouds through a checkpoint")
    common_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trace-node", type=int,
                   help="export one lattice node's learned neighbor weights")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("encode", help="write latent codes, one per line")
    common_data(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("spectra", help="learned-graph Laplacian spectrum")
    common_data(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("alpha-sweep", help="filter-strength sweep")
    common_data(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_alpha_sweep)

    p = sub.add_parser("certify", help="run the theorem certificate suite")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--corner-mode", action="store_true",
                   help="debug: corner voxel proxies (expected to fail)")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("classify", help="linear head on frozen codes")
    p.add_argument("--train-codes", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test-codes")
    p.add_argument("--test-labels")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_classify)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
