"""Acceptance run. Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL line per criterion.

Wherever a criterion is about observable behaviour it is driven through the
``cane`` command line; oracles are computed independently of the code under
test.
"""

import os
import random
import time
from fractions import Fraction

import pytest

from cane.castore import BlockId, BlockStore, FileBlockStore
from cane.identity import SignedManifest, generate_identity, sign_manifest, verify_manifest
from cane.manifest import EntryKind, VersionStamp
from cane.merklefs import MerkleFS
from cane.scenefs import RenderCache, SceneRenderer, grid_to_text
from conftest import Cli, stamp
from test_appdir import app_blocks
from test_castore import exact_oracle
from test_scenefs import random_scene

criterion = pytest.mark.criterion


def put(cli, tmp_path, data, path, i, *extra):
    f = tmp_path / "upload.bin"
    f.write_bytes(data)
    return cli.root("put", f, path, "--stamp", stamp(i), *extra)


def workspace(tmp_path, name):
    c = Cli(tmp_path / name)
    c("init", "--clock", "fixed")
    return c


# 1 --------------------------------------------------------------------------


@criterion(1, "collision formula: 2^140 blocks at 512 bits < 1e-70; within 10% of exact for n <= 2^10, bits <= 20; < 1 s")
def test_collision_formula_via_cli(cli):
    t0 = time.perf_counter()
    assert float(cli("collision", "2^140", "512").kv()["probability"]) < 1e-70
    assert time.perf_counter() - t0 < 1.0
    for n, bits in [(3, 4), (2, 1), (1024, 20), (1024, 10), (500, 16), (2 ** 10, 11)]:
        got = float(cli("collision", n, bits).kv()["probability"])
        want = exact_oracle(n, bits)
        assert abs(got - want) <= 0.1 * want, (n, bits, got, want)


@criterion(1, "collision formula: 2^140 blocks at 512 bits < 1e-70; within 10% of exact for n <= 2^10, bits <= 20; < 1 s")
def test_collision_formula_full_grid_and_speed():
    from cane.castore import collision_probability
    import math
    # oracle: exact product in log space with math.fsum, independent of numpy
    def exact(n, bits):
        space = 2 ** bits
        if n > space:
            return 1.0
        return -math.expm1(math.fsum(math.log1p(-i / space) for i in range(n)))

    t0 = time.perf_counter()
    results = {(n, b): collision_probability(n, b) for b in range(1, 21) for n in range(0, 1025)}
    results[(2 ** 140, 512)] = collision_probability(2 ** 140, 512)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0, elapsed
    assert results[(2 ** 140, 512)] < 1e-70
    for (n, b), p in results.items():
        if b == 512:
            continue
        want = exact(n, b)
        if want == 0:
            assert p == 0
        else:
            assert abs(p - want) <= 0.1 * want, (n, b, p, want)


# 2 --------------------------------------------------------------------------


def data_blocks(cli):
    return int(cli("stats").kv()["data_blocks"])


@criterion(2, "dedup: zero MiB adds 1 data block; one-chunk edit of 256 chunks adds 1; revert adds 0; < 5 s")
def test_dedup_triad(cli, tmp_path):
    t0 = time.perf_counter()
    before = data_blocks(cli)
    put(cli, tmp_path, bytes(1 << 20), "zeros", 1)
    assert data_blocks(cli) - before == 1

    original = os.urandom(256 * 4096)
    put(cli, tmp_path, original, "big", 2)
    edited = bytearray(original)
    edited[100 * 4096 + 7] ^= 0x10
    before = data_blocks(cli)
    put(cli, tmp_path, bytes(edited), "big", 3)
    assert data_blocks(cli) - before == 1

    before = data_blocks(cli)
    cli("revert", "big", stamp(3), "--stamp", stamp(4))
    assert data_blocks(cli) - before == 0
    assert cli("cat", "big").out == original
    assert time.perf_counter() - t0 < 5.0


# 3 --------------------------------------------------------------------------

PATHS = ["a", "b", "d/x", "d/y", "d/e/z"]


def random_history(fs, seed):
    """k random mutations; returns roots and an independent model of each version."""
    rng = random.Random(seed)
    k = rng.randint(1, 50)
    model: dict[str, bytes] = {}
    roots = [fs.empty_tree()]
    models = [dict(model)]
    t = 1_000_000_000_000_000
    for _ in range(k):
        t += rng.randint(1, 10 ** 6)
        s = VersionStamp.from_micros(t, rng.randint(0, 3))
        if model and rng.random() < 0.25:
            path = rng.choice(sorted(model))
            root = fs.remove(roots[-1], path, s)
            del model[path]
        else:
            path = rng.choice(PATHS)
            data = rng.randbytes(rng.choice([0, 10, 64, 65, 4096, 9000]))
            root = fs.write_file(roots[-1], path, data, s)
            model[path] = data
        roots.append(root)
        models.append(dict(model))
    return k, roots, models


@criterion(3, "history: k mutations, '.' x k reaches the start, '...' lists k ordered stamps, old roots re-read; 100 seeds; < 30 s")
def test_history_mechanism_property():
    t0 = time.perf_counter()
    for seed in range(100):
        fs = MerkleFS(BlockStore())
        k, roots, models = random_history(fs, seed)
        head = roots[-1]
        assert fs.resolve(head, "/".join(["."] * k)) == roots[0].root
        listing = [e.text_name for e in fs.listdir(head, "...")]
        assert len(listing) == k
        stamps = [VersionStamp.parse(n) for n in listing]
        assert all(a < b for a, b in zip(stamps, stamps[1:]))
        for root, model in zip(roots, models):
            files = {p: fs.read_file(root, p) for p, e in fs.walk(root) if e.kind is not EntryKind.DIR}
            assert files == model
    assert time.perf_counter() - t0 < 30.0


@criterion(3, "history: k mutations, '.' x k reaches the start, '...' lists k ordered stamps, old roots re-read; 100 seeds; < 30 s")
def test_history_mechanism_via_cli(tmp_path):
    t0 = time.perf_counter()
    for seed in range(5):
        rng = random.Random(seed)
        cli = workspace(tmp_path, f"h{seed}")
        start = cli("resolve").text.strip()
        k = rng.randint(1, 50)
        model, snapshots = {}, []
        for i in range(k):
            path = rng.choice(PATHS)
            data = rng.randbytes(rng.choice([3, 100, 5000]))
            root = put(cli, tmp_path, data, path, i)
            model[path] = data
            snapshots.append((root, dict(model)))
        assert cli("resolve", "/".join(["."] * k)).text.strip() == start
        stamps = [line.split()[-1] for line in cli("ls", "...").text.splitlines()]
        assert stamps == [stamp(i) for i in range(k)]
        for root, snap in snapshots:
            for path, data in snap.items():
                assert cli("cat", path, "--root", root).out == data
    assert time.perf_counter() - t0 < 30.0


# 4 --------------------------------------------------------------------------


@criterion(4, "tamper evidence: 1000 single-bit manifest perturbations all rejected; < 10 s")
def test_tamper_evidence(tmp_path):
    t0 = time.perf_counter()
    fs = MerkleFS(BlockStore())
    tree = fs.build_tree({"doc": os.urandom(5000), "sub": {"note": "hello"}, "tiny": "x"})
    raw = fs.store.get_block(tree.root)
    signer = generate_identity(b"publisher")
    sm = sign_manifest(signer, tree.root)
    assert verify_manifest(sm)
    rng = random.Random(4)
    accepted = 0
    for _ in range(1000):
        bit = rng.randrange(len(raw) * 8)
        bad = bytearray(raw)
        bad[bit // 8] ^= 1 << (bit % 8)
        tampered = SignedManifest(BlockId.of(bytes(bad)), sm.signer, sm.signature)
        accepted += verify_manifest(tampered)
    assert accepted == 0
    assert time.perf_counter() - t0 < 10.0


@criterion(4, "tamper evidence: 1000 single-bit manifest perturbations all rejected; < 10 s")
def test_tamper_evidence_via_cli(cli, tmp_path):
    t0 = time.perf_counter()
    put(cli, tmp_path, os.urandom(5000), "pub/doc", 1)
    cli("keygen", "--seed", "publisher")
    cli("sign", "pub", "--out", "pub.sig")
    assert cli("verify", "pub.sig", "--path", "pub").text.strip() == "accept"
    original = (cli.ws / "pub.sig").read_bytes()
    rng = random.Random(44)
    accepted = 0
    for _ in range(1000):
        # the manifest digest occupies bytes 2..66 of the signature file
        bit = rng.randrange(2 * 8, 66 * 8)
        bad = bytearray(original)
        bad[bit // 8] ^= 1 << (bit % 8)
        (cli.ws / "bad.sig").write_bytes(bytes(bad))
        res = cli("verify", "bad.sig", check=False)
        accepted += res.code == 0
    assert accepted == 0
    assert time.perf_counter() - t0 < 10.0


# 5 --------------------------------------------------------------------------

T1 = 1_767_225_600_000_000  # 2026-01-01T00:00:00Z
T2 = 1_769_904_000_000_000  # 2026-02-01T00:00:00Z
MOMENTS = {"before": T1 - 1_000_000, "start": T1, "mid": (T1 + T2) // 2,
           "end-eps": T2 - 1, "end": T2, "after": T2 + 1_000_000}


def expected_access(who, moment):
    if who == "listed":
        return "allow"
    if who == "stranger":
        return "deny(not-listed)"
    return "allow" if T1 <= MOMENTS[moment] < T2 else "deny(cert-expired)"


@criterion(5, "certificate windows: {before,start,mid,end-eps,end,after} x {listed,group-cert,stranger} x {read,write}")
def test_certificate_truth_table(cli, tmp_path):
    keys = {name: cli("keygen", "--seed", name, "--out", f"{name}.key").kv()["address"]
            for name in ("listed", "member", "stranger")}
    group = cli("keygen", "--seed", "group", "--out", "group.key").kv()["address"]
    cli("cert", "issue", keys["member"], "--from", T1, "--to", T2, "--out", "member.cert",
        "--identity", "group.key")
    acl = ["--reader", keys["listed"], "--reader", group, "--writer", keys["listed"], "--writer", group]
    put(cli, tmp_path, b"secret" * 30, "vault/file", 1, *acl)
    principals = {"listed": keys["listed"], "group-cert": keys["member"], "stranger": keys["stranger"]}
    mismatches = []
    for moment, t in MOMENTS.items():
        for who, key in principals.items():
            for mode in ("read", "write"):
                res = cli("access", "vault/file", "--requester", key, "--cert", "member.cert",
                          "--mode", mode, "--at", t, check=False)
                got = res.text.strip()
                want = expected_access(who, moment)
                if got != want or res.code != (0 if want == "allow" else 5):
                    mismatches.append((moment, who, mode, got, want))
    assert mismatches == []
    assert len(MOMENTS) * len(principals) * 2 == 36


# 6 --------------------------------------------------------------------------


@criterion(6, "AppDir laziness: 7-platform fetch equals 1-platform fetch; second app fetches the closure difference")
def test_appdir_laziness(tmp_path):
    src = workspace(tmp_path, "src")
    rng = random.Random(6)
    for i in range(7):
        put(src, tmp_path, rng.randbytes(20000), f"plat{i}/bin/tool", 2 * i)
        put(src, tmp_path, rng.randbytes(3000), f"plat{i}/share/data", 2 * i + 1)
    fat = src("appdir", "build", "tool", *sum((["--platform", f"p{i}=plat{i}"] for i in range(7)), [])).kv()["appdir"]
    thin = src("appdir", "build", "tool", "--platform", "p3=plat3").kv()["appdir"]
    fetched = {}
    for label, app in (("fat", fat), ("thin", thin)):
        dst = workspace(tmp_path, f"dst-{label}")
        fetched[label] = int(dst("appdir", "materialize", app, "p3", "--from", src.ws / "store").kv()["bytes_fetched"])
    assert fetched["fat"] == fetched["thin"] > 0

    put(src, tmp_path, rng.randbytes(40000), "lib/lib.so", 20)
    put(src, tmp_path, rng.randbytes(15000), "a/a.bin", 21)
    put(src, tmp_path, rng.randbytes(15000), "b/b.bin", 22)
    lib = src("appdir", "build", "lib", "--platform", "x=lib").kv()["appdir"]
    a = src("appdir", "build", "A", "--platform", "x=a", "--dep", lib).kv()["appdir"]
    b = src("appdir", "build", "B", "--platform", "x=b", "--dep", lib).kv()["appdir"]
    dst = workspace(tmp_path, "dst-shared")
    dst("appdir", "materialize", a, "x", "--from", src.ws / "store")
    out = dst("appdir", "materialize", b, "x", "--from", src.ws / "store", porcelain=True)
    got = {line.split("=", 1)[1] for line in out.text.splitlines() if line.startswith("block=")}

    oracle_fs = MerkleFS(FileBlockStore(src.ws / "store", create=False))
    ca = app_blocks(oracle_fs, BlockId.from_hex(a), "x")
    cb = app_blocks(oracle_fs, BlockId.from_hex(b), "x")
    assert got == {x.hex for x in cb - ca}
    assert 0 < len(got) < len(cb)


# 7 --------------------------------------------------------------------------


@criterion(7, "flash crowd: origin sends 100 blocks vs 100,000 baseline, ratio 1/1000, deterministic; < 10 s")
def test_flash_crowd(cli, tmp_path):
    t0 = time.perf_counter()
    scn = tmp_path / "flashcrowd.scn"
    scn.write_bytes(cli("sim", "flashcrowd", "--clients", 1000, "--blocks", 100).out)
    first = cli("sim", "run", scn, "--seed", 7)
    second = cli("sim", "run", scn, "--seed", 7)
    assert first.out == second.out
    base = cli("sim", "run", scn, "--seed", 7, "--baseline").kv()
    coop = first.kv()
    assert int(coop["origin_transmissions"]) == 100
    assert int(base["origin_transmissions"]) == 100_000
    assert Fraction(int(coop["origin_transmissions"]), int(base["origin_transmissions"])) == Fraction(1, 1000)
    assert int(coop["completed"]) == 100_000 and int(coop["failed"]) == 0
    assert time.perf_counter() - t0 < 10.0


# 8 --------------------------------------------------------------------------


@criterion(8, "DoS resilience: origin killed after warm-up; 500 later requests complete, 0 failures")
def test_dos_resilience(cli, tmp_path):
    lines = ["node origin origin", "node router router"]
    lines += [f"node c{i:03d} client" for i in range(500)]
    lines += ["link origin router 1"] + [f"link router c{i:03d} 1" for i in range(500)]
    lines += ["content origin site 10", "request c000 site 0", "kill origin 100"]
    lines += [f"request c{i:03d} site 200" for i in range(500)]
    scn = tmp_path / "dos.scn"
    scn.write_text("\n".join(lines) + "\n")
    rep = cli("sim", "run", scn, "--seed", 1).kv()
    # 10 warm-up block requests plus 500 file requests of 10 blocks each
    assert int(rep["completed"]) == 10 + 500 * 10
    assert int(rep["failed"]) == 0
    assert int(rep["origin_transmissions"]) == 10
    # control: without caches the same scenario fails after the kill
    base = cli("sim", "run", scn, "--seed", 1, "--baseline").kv()
    assert int(base["failed"]) == 500 * 10


# 9 --------------------------------------------------------------------------


def put_scene(cli, tmp_path, prefix, attrs, i0):
    for j, (path, value) in enumerate(sorted(attrs.items())):
        extra = ("--receptor",) if path.endswith("click") else ()
        put(cli, tmp_path, value.encode(), f"{prefix}/{path}", i0 + j, *extra)
    return i0 + len(attrs)


BUTTON = {"kind": "button", "label": "OK", "click": ""}


def scene_attrs(x, y):
    attrs = {"kind": "window", "x": str(x), "y": str(y), "w": "30", "h": "8", "label": "Main"}
    for name, bx in (("left", "2"), ("right", "12")):
        attrs.update({f"{name}/{k}": v for k, v in BUTTON.items()})
        attrs.update({f"{name}/x": bx, f"{name}/y": "3"})
    attrs.update({"body/kind": "text", "body/x": "2", "body/y": "5", "body/label": "hello"})
    return attrs


@criterion(9, "render memoization: duplicate button missed once; window move costs 1 render; cached equals cold over 100 scenes")
def test_render_memoization_via_cli(cli, tmp_path):
    attrs = {"kind": "window", "x": "1", "y": "1", "w": "30", "h": "8", "label": "Main",
             "p/kind": "pane", "p/x": "1", "p/y": "1", "p/w": "12", "p/h": "4",
             "q/kind": "pane", "q/x": "15", "q/y": "1", "q/w": "12", "q/h": "4",
             "p/b/kind": "button", "p/b/x": "2", "p/b/y": "1", "p/b/label": "OK", "p/b/click": ""}
    i = put_scene(cli, tmp_path, "ui", attrs, 0)
    cli("cp", "ui/p/b", "ui/q/b", "--stamp", stamp(i))
    assert cli("resolve", "ui/p/b").out == cli("resolve", "ui/q/b").out
    cold = cli("scene", "render", "ui", porcelain=True)
    stats = cold.kv()
    # five elements, four distinct: the shared button is drawn once
    assert stats["render_calls"] == "4" and stats["max_fragment_misses"] == "1"
    assert cold.text.count("[OK]") == 2

    put(cli, tmp_path, b"7", "ui/x", i + 1)
    moved = cli("scene", "render", "ui", "--warm", "ui/.", porcelain=True).kv()
    assert moved["render_calls"] == "1"
    assert cli("scene", "render", "ui", "--warm", "ui/.").out == cli("scene", "render", "ui").out


@criterion(9, "render memoization: duplicate button missed once; window move costs 1 render; cached equals cold over 100 scenes")
def test_render_memoization_random_scenes():
    rng = random.Random(99)
    fs = MerkleFS(BlockStore())
    r = SceneRenderer(fs)
    cache = RenderCache()
    for _ in range(100):
        t = fs.build_tree(random_scene(rng))
        cached = r.render(t, cache)
        assert grid_to_text(cached.grid) == grid_to_text(r.render(t).grid)
        assert max(cache.miss_counts.values()) == 1


# 10 -------------------------------------------------------------------------


def full_session(cli, tmp_path, other_store):
    """Exercise every subcommand; returns the list of (argv, code, stdout)."""
    log = []

    def run(*argv, check=True):
        res = cli(*argv, check=check)
        log.append((argv, res.code, res.out))
        return res

    f = tmp_path / "payload.bin"
    for i, (path, data) in enumerate([("docs/a.txt", b"alpha" * 30), ("docs/b.txt", b"b"),
                                      ("app/bin/tool", bytes(range(256)) * 40)]):
        f.write_bytes(data)
        run("put", f, path, "--stamp", stamp(i))
    run("mkdir", "empty", "--stamp", stamp(10))
    run("rm", "docs/b.txt", "--stamp", stamp(11))
    run("revert", "docs/b.txt", stamp(11), "--stamp", stamp(12))
    for argv in (("cp", "docs/a.txt", "docs/c.txt", "--stamp", stamp(13)), ("cat", "docs/a.txt"), ("ls",), ("ls", "docs/..."), ("resolve", "docs/."), ("log", "docs"),
                 ("stats",), ("collision", "2^140"), ("keygen", "--seed", "k"), ("sign", "docs", "--out", "d.sig"),
                 ("verify", "d.sig", "--path", "docs")):
        run(*argv)
    head = cli("resolve").text.strip()
    first = cli("resolve", "./././././.").text.strip()
    run("forks", head, first)
    member = cli("keygen", "--seed", "m", "--out", "m.key").kv()["address"]
    run("cert", "issue", member, "--from", T1, "--to", T2, "--out", "m.cert")
    run("cert", "check", "m.cert", "--at", T1)
    run("access", "docs/a.txt", "--requester", member, "--at", T1)
    app = run("appdir", "build", "tool", "--platform", "linux=app").kv()["appdir"]
    run("appdir", "closure", app, "linux")
    run("appdir", "materialize", app, "linux", "--from", other_store)
    scn = tmp_path / "fc.scn"
    scn.write_bytes(run("sim", "flashcrowd", "--clients", "50", "--blocks", "10").out)
    run("sim", "run", scn, "--seed", "3")
    run("sim", "run", scn, "--seed", "3", "--baseline")
    for j, (path, value) in enumerate(sorted(scene_attrs(0, 0).items())):
        f.write_bytes(value.encode())
        run("put", f, f"ui/{path}", "--stamp", stamp(100 + j), *(("--receptor",) if path.endswith("click") else ()))
    run("scene", "render", "ui")
    run("scene", "events", "ui")
    run("scene", "click", "ui", "3", "3", "go", "--stamp", stamp(200))
    run("cat", "nope", check=False)
    run("bogus", check=False)
    return log


@criterion(10, "determinism: every command with fixed clock and seed gives byte-identical output twice")
def test_cli_determinism(tmp_path):
    remote = workspace(tmp_path, "remote")
    f = tmp_path / "tool.bin"
    f.write_bytes(bytes(range(256)) * 40)
    remote("put", f, "bin/tool", "--stamp", stamp(2))
    runs = []
    for n in range(2):
        d = tmp_path / f"run{n}"
        d.mkdir()
        ws = Cli(d / "ws")
        init = ws("init", "--clock", "fixed")
        remote_store = tmp_path / f"store{n}"
        import shutil
        shutil.copytree(remote.ws / "store", remote_store)
        runs.append([(("init",), init.code, init.out)] + full_session(ws, d, remote_store))
    assert len(runs[0]) == len(runs[1])
    for (argv, code_a, out_a), (_, code_b, out_b) in zip(*runs):
        assert (code_a, out_a) == (code_b, out_b), argv
    covered = {argv[0] for argv, _, _ in runs[0]}
    assert covered >= {"init", "put", "mkdir", "rm", "cp", "cat", "ls", "resolve", "log", "revert", "forks",
                       "stats", "collision", "keygen", "sign", "verify", "cert", "access", "appdir",
                       "sim", "scene"}
