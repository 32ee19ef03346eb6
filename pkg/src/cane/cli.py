"""``cane`` command line.

A workspace directory holds ``cane.ws`` (key=value settings including the
current root) and the block store. Every mutating command prints the new
root; ``--root`` reads from any earlier root instead of the current one.

Exit codes: 0 ok, 2 usage, 3 not found, 4 corruption, 5 access denied,
6 scenario/scene error, 7 invalid operation (bad name, stamp, kind, window).
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import BinaryIO, Optional

from . import appdir as appdir_mod
from . import identity as ident
from . import netsim
from .castore import BlockId, FileBlockStore, birthday_bound, collision_probability
from .errors import AccessDeniedError, CaneError, InvalidOperationError, NotFoundError, SpecError
from .manifest import EntryKind, VersionStamp
from .merklefs import DEFAULT_LWF_THRESHOLD, MerkleFS, TreeHandle, split_path
from .scenefs import RenderCache, SceneRenderer

WS_FILE = "cane.ws"
EXIT_OK, EXIT_USAGE = 0, 2


@dataclass
class Workspace:
    dir: Path
    store_path: str = "store"
    current_root: str = ""
    identity_path: str = ""
    clock_mode: str = "real"
    lwf_threshold: int = DEFAULT_LWF_THRESHOLD

    KEYS = ("store_path", "current_root", "identity_path", "clock_mode", "lwf_threshold")

    @classmethod
    def load(cls, directory) -> "Workspace":
        directory = Path(directory)
        path = directory / WS_FILE
        if not path.exists():
            raise NotFoundError(f"no workspace at {directory} (run `cane init`)")
        values = _read_kv(path.read_text())
        ws = cls(directory)
        for key in cls.KEYS:
            if key in values:
                setattr(ws, key, int(values[key]) if key == "lwf_threshold" else values[key])
        return ws

    def text(self) -> str:
        return "".join(f"{k}={getattr(self, k)}\n" for k in self.KEYS)

    def save(self) -> None:
        tmp = self.dir / (WS_FILE + ".tmp")
        tmp.write_text(self.text())
        os.replace(tmp, self.dir / WS_FILE)

    def store(self) -> FileBlockStore:
        return FileBlockStore(self.dir / self.store_path, create=False)

    def fs(self) -> MerkleFS:
        return MerkleFS(self.store(), self.lwf_threshold)

    @property
    def root(self) -> TreeHandle:
        return TreeHandle(BlockId.from_hex(self.current_root))

    @contextlib.contextmanager
    def locked(self):
        with open(self.dir / (WS_FILE + ".lock"), "a") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def compare_and_swap(self, expected: BlockId, new: BlockId) -> None:
        """Advance the current root only if nobody else moved it meanwhile."""
        with self.locked():
            fresh = Workspace.load(self.dir)
            if fresh.current_root != expected.hex:
                raise InvalidOperationError(
                    f"lost race: current root moved to {fresh.current_root[:16]}; "
                    f"new root {new.hex} kept in store (see `cane forks`)")
            fresh.current_root = new.hex
            fresh.save()
            self.current_root = new.hex


def _read_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


class Console:
    def __init__(self, stdout: BinaryIO, stderr: BinaryIO, porcelain: bool = False):
        self.stdout = stdout
        self.stderr = stderr
        self.porcelain = porcelain

    def out(self, text: str = "") -> None:
        self.stdout.write((text + "\n").encode("utf-8", "surrogateescape"))

    def raw(self, data: bytes) -> None:
        self.stdout.write(data)

    def err(self, text: str) -> None:
        self.stderr.write((text + "\n").encode("utf-8", "surrogateescape"))

    def kv(self, key: str, value) -> None:
        self.out(f"{key}={value}")


def parse_time(text: str) -> int:
    """Microseconds since the epoch from an integer, ISO-8601 time, or version stamp."""
    text = text.strip()
    if text.lstrip("-").isdigit():
        return int(text)
    try:
        return VersionStamp.parse(text).micros
    except CaneError:
        pass
    try:
        t = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise InvalidOperationError(f"not a time: {text!r}") from None
    return ident.to_micros(t if t.tzinfo else t.replace(tzinfo=timezone.utc))


# commands ---------------------------------------------------------------------


def _stamp(ws: Workspace, fs: MerkleFS, args, tree: TreeHandle, path) -> VersionStamp:
    if args.stamp:
        return VersionStamp.parse(args.stamp)
    if ws.clock_mode == "fixed":
        raise InvalidOperationError("fixed clock mode: pass --stamp")
    now = VersionStamp(datetime.now(timezone.utc), 0)
    last = fs.last_stamp(tree, path)
    if last is not None and not now > last:
        now = VersionStamp(last.utc_time, last.seq + 1)
    return now


def _base(ws: Workspace, args) -> TreeHandle:
    if getattr(args, "root", None):
        return TreeHandle(BlockId.from_hex(args.root))
    return ws.root


def _commit(ws: Workspace, con: Console, base: TreeHandle, new: TreeHandle) -> None:
    ws.compare_and_swap(base.root, new.root)
    con.kv("root", new.root.hex)


def cmd_init(args, con):
    d = Path(args.ws)
    d.mkdir(parents=True, exist_ok=True)
    if (d / WS_FILE).exists():
        raise InvalidOperationError(f"workspace already initialised at {d}")
    ws = Workspace(d, clock_mode=args.clock, lwf_threshold=args.lwf_threshold)
    store = FileBlockStore(d / ws.store_path, chunk_size=args.chunk_size)
    fs = MerkleFS(store, ws.lwf_threshold)
    ws.current_root = fs.empty_tree().root.hex
    ws.save()
    con.kv("root", ws.current_root)


def _perms(fs: MerkleFS, args) -> Optional[BlockId]:
    if not (args.reader or args.writer):
        return None
    acl = ident.Acl(tuple(bytes.fromhex(k) for k in args.reader),
                    tuple(bytes.fromhex(k) for k in args.writer))
    return acl.store(fs.store)


def cmd_put(args, con, ws):
    fs = ws.fs()
    data = sys.stdin.buffer.read() if args.file == "-" else Path(args.file).read_bytes()
    base = _base(ws, args)
    path = split_path(args.path)
    stamp = _stamp(ws, fs, args, base, path[:-1])
    kind = EntryKind.RECEPTOR if args.receptor else None
    new = fs.write_file(base, path, data, stamp, kind=kind, perms=_perms(fs, args))
    _commit(ws, con, base, new)


def cmd_mkdir(args, con, ws):
    fs = ws.fs()
    base = _base(ws, args)
    path = split_path(args.path)
    new = fs.make_dir(base, path, _stamp(ws, fs, args, base, path[:-1]))
    _commit(ws, con, base, new)


def cmd_rm(args, con, ws):
    fs = ws.fs()
    base = _base(ws, args)
    path = split_path(args.path)
    new = fs.remove(base, path, _stamp(ws, fs, args, base, path[:-1]))
    _commit(ws, con, base, new)


def cmd_cp(args, con, ws):
    fs = ws.fs()
    base = _base(ws, args)
    dst = split_path(args.dst)
    new = fs.copy(base, args.src, dst, _stamp(ws, fs, args, base, dst[:-1]))
    _commit(ws, con, base, new)


def cmd_cat(args, con, ws):
    con.raw(ws.fs().read_file(_base(ws, args), args.path))


def _entry_line(e, porcelain: bool) -> str:
    if e.kind is EntryKind.LWF:
        ref = f"inline:{len(e.inline)}"
    else:
        ref = e.target.hex if porcelain else e.target.short(16)
    return f"{e.kind.name.lower():8} {ref} {e.text_name}"


def cmd_ls(args, con, ws):
    fs = ws.fs()
    for e in fs.listdir(_base(ws, args), args.path):
        con.out(_entry_line(e, con.porcelain))


def cmd_resolve(args, con, ws):
    con.out(ws.fs().resolve(_base(ws, args), args.path).hex)


def cmd_log(args, con, ws):
    for stamp, version in ws.fs().history(_base(ws, args), args.path):
        con.out(f"{stamp} {version.hex if con.porcelain else version.short(16)}")


def cmd_revert(args, con, ws):
    fs = ws.fs()
    base = _base(ws, args)
    path = split_path(args.path)
    new_stamp = _stamp(ws, fs, args, base, path)
    new = fs.revert(base, path, VersionStamp.parse(args.version), new_stamp)
    _commit(ws, con, base, new)


def cmd_forks(args, con, ws):
    fs = ws.fs()
    rep = fs.detect_forks(TreeHandle(BlockId.from_hex(args.a)), TreeHandle(BlockId.from_hex(args.b)))
    con.kv("linear", "yes" if rep.linear else "no")
    con.kv("ancestor", rep.ancestor.hex if rep.ancestor else "none")
    for h in rep.heads:
        con.kv("head", h.hex)


def cmd_stats(args, con, ws):
    for k, v in ws.store().stats().as_dict().items():
        con.kv(k, v)


def _count(text: str) -> int:
    base, sep, exp = text.partition("^")
    return int(base) ** int(exp) if sep else int(text)


def cmd_collision(args, con):
    n, bits = _count(args.n), args.bits
    con.kv("n", args.n)
    con.kv("bits", bits)
    con.kv("probability", repr(collision_probability(n, bits)))
    con.kv("birthday_bound", repr(birthday_bound(n, bits)))


def _identity_file(ws: Workspace, args) -> Path:
    p = getattr(args, "identity", None) or ws.identity_path
    if not p:
        raise NotFoundError("no identity (run `cane keygen`)")
    return ws.dir / p


def _load_identity(ws, args) -> ident.Identity:
    return ident.load_identity(_identity_file(ws, args).read_text())


def cmd_keygen(args, con, ws):
    seed = args.seed.encode() if args.seed is not None else None
    me = ident.generate_identity(seed)
    out = args.out or "identity.key"
    (ws.dir / out).write_text(ident.dump_identity(me))
    if not args.out or not ws.identity_path:
        ws.identity_path = out
        with ws.locked():
            fresh = Workspace.load(ws.dir)
            fresh.identity_path = out
            fresh.save()
    con.kv("address", me.address)


def cmd_sign(args, con, ws):
    fs = ws.fs()
    me = _load_identity(ws, args)
    target = fs.resolve(_base(ws, args), args.path)
    sm = ident.sign_manifest(me, target)
    if args.out:
        (ws.dir / args.out).write_bytes(sm.encode())
    con.kv("manifest", sm.manifest.hex)
    con.kv("signer", sm.signer.hex())
    con.kv("signature", sm.signature.hex())


def cmd_verify(args, con, ws):
    sm = ident.SignedManifest.decode((ws.dir / args.sigfile).read_bytes())
    ok = ident.verify_manifest(sm)
    if ok and args.path is not None:
        ok = ws.fs().resolve(_base(ws, args), args.path) == sm.manifest
    con.out("accept" if ok else "reject")
    if not ok:
        raise _Quiet(AccessDeniedError.exit_code)


def cmd_cert_issue(args, con, ws):
    group = _load_identity(ws, args)
    cert = ident.issue_certificate(group, bytes.fromhex(args.member),
                                   parse_time(args.valid_from), parse_time(args.valid_to))
    if args.out:
        (ws.dir / args.out).write_bytes(cert.encode())
    con.kv("group", cert.group.hex())
    con.kv("member", cert.member.hex())
    con.kv("valid_from", cert.valid_from)
    con.kv("valid_to", cert.valid_to)
    con.kv("certificate", cert.encode().hex())


def _read_cert(ws, name) -> ident.Certificate:
    p = ws.dir / name
    data = p.read_bytes() if p.exists() else bytes.fromhex(name)
    return ident.Certificate.decode(data)


def cmd_cert_check(args, con, ws):
    cert = _read_cert(ws, args.cert)
    problem = ident.check_certificate(cert, parse_time(args.at))
    if args.group and cert.group.hex() != args.group:
        problem = ident.DenyReason.NOT_LISTED
    con.out("valid" if problem is None else f"deny({problem.value})")
    if problem is not None:
        raise _Quiet(AccessDeniedError.exit_code)


def cmd_access(args, con, ws):
    fs = ws.fs()
    node = fs.lookup(_base(ws, args), args.path)
    acl = ident.Acl.load(fs.store, node.perms)
    certs = [_read_cert(ws, c) for c in args.cert]
    evidence = ident.SignedManifest.decode((ws.dir / args.evidence).read_bytes()) if args.evidence else None
    decision = ident.check_access(acl, bytes.fromhex(args.requester), certs, evidence,
                                  args.mode, parse_time(args.at))
    con.out(str(decision))
    if not decision:
        raise _Quiet(AccessDeniedError.exit_code)


def cmd_appdir_build(args, con, ws):
    fs = ws.fs()
    base = _base(ws, args)
    platforms = {}
    for item in args.platform:
        tag, sep, path = item.partition("=")
        if not sep:
            raise InvalidOperationError(f"--platform expects TAG=PATH, got {item!r}")
        node = fs.lookup(base, path)
        if not node.is_dir:
            raise InvalidOperationError(f"{path} is not a directory")
        platforms[tag] = node.id
    deps = [BlockId.from_hex(d) for d in args.dep]
    con.kv("appdir", appdir_mod.build_appdir(fs.store, args.name, platforms, deps).hex)


def cmd_appdir_closure(args, con, ws):
    ids = appdir_mod.closure(ws.store(), BlockId.from_hex(args.app), args.platform)
    con.kv("blocks", len(ids))
    for b in sorted(ids, key=lambda b: b.digest):
        con.out(b.hex)


def cmd_appdir_materialize(args, con, ws):
    remote = FileBlockStore(Path(args.source), create=False)
    log = appdir_mod.materialize(BlockId.from_hex(args.app), args.platform, remote, ws.store())
    con.kv("fetched_blocks", len(log.requested))
    con.kv("bytes_fetched", log.bytes_fetched)
    con.kv("index_bytes_fetched", log.index_bytes_fetched)
    if con.porcelain:
        for b in log.requested:
            con.kv("block", b.hex)


def cmd_sim_run(args, con, ws=None):
    sc = netsim.parse_scenario(Path(args.scenario).read_text())
    metrics = netsim.run_scenario(sc, seed=args.seed, baseline=args.baseline)
    con.raw(metrics.report().encode())
    if args.csv:
        Path(args.csv).write_text(metrics.csv())


def cmd_sim_flashcrowd(args, con, ws=None):
    con.raw(netsim.format_scenario(netsim.flash_crowd_scenario(args.clients, args.blocks)).encode())


def _scene(ws, args):
    fs = ws.fs()
    base = _base(ws, args)
    node = fs.lookup(base, args.path)
    if not node.is_dir:
        raise SpecError(f"{args.path} is not a scene directory")
    return fs, base, TreeHandle(node.id)


def _warm(ws, args, renderer: SceneRenderer) -> RenderCache:
    """Cache primed by rendering each ``--warm`` scene first."""
    cache = RenderCache()
    base = _base(ws, args)
    for path in args.warm:
        node = ws.fs().lookup(base, path)
        renderer.render(TreeHandle(node.id), cache, args.width, args.height)
    cache.miss_counts.clear()
    return cache


def cmd_scene_render(args, con, ws):
    fs, _, scene = _scene(ws, args)
    renderer = SceneRenderer(fs)
    cache = _warm(ws, args, renderer)
    out = renderer.render(scene, cache, args.width, args.height)
    con.raw(out.text.encode())
    if con.porcelain:
        con.kv("render_calls", out.render_calls)
        con.kv("max_fragment_misses", max(cache.miss_counts.values(), default=0))


def cmd_scene_events(args, con, ws):
    fs, _, scene = _scene(ws, args)
    renderer = SceneRenderer(fs)
    emap = renderer.event_map(scene, _warm(ws, args, renderer), args.width, args.height)
    for rect, path in emap.entries:
        con.out(f"{rect.x} {rect.y} {rect.w} {rect.h} {path}")


def cmd_scene_click(args, con, ws):
    fs, base, scene = _scene(ws, args)
    target = SceneRenderer(fs).event_map(scene, RenderCache()).lookup(args.x, args.y)
    if target is None:
        from .errors import NoTargetError
        raise NoTargetError(f"no receptor at ({args.x}, {args.y})")
    full = split_path(args.path) + split_path(target)
    stamp = _stamp(ws, fs, args, base, full[:-1])
    new = fs.write_file(base, full, args.payload.encode(), stamp, kind=EntryKind.RECEPTOR)
    con.kv("receptor", "/".join(p.decode() for p in full))
    _commit(ws, con, base, new)


class _Quiet(Exception):
    """Exit with a code after output has already been written."""

    def __init__(self, code):
        self.code = code


# parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cane", description="content addressed storage workspace")
    p.add_argument("--ws", default=os.environ.get("CANE_WS", "."), help="workspace directory")
    p.add_argument("--porcelain", action="store_true", help="machine-readable output")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, fn, needs_ws=True, parent=sub, **kw):
        sp = parent.add_parser(name, **kw)
        sp.set_defaults(fn=fn, needs_ws=needs_ws)
        return sp

    def rooted(sp):
        sp.add_argument("--root", help="operate on this root instead of the current one")
        return sp

    def stamped(sp):
        sp.add_argument("--stamp", help="version stamp, e.g. 2005-07-14T14:23:17.000001Z.1")
        return rooted(sp)

    sp = cmd("init", cmd_init, needs_ws=False, help="create a workspace")
    sp.add_argument("--clock", choices=("real", "fixed"), default="real")
    sp.add_argument("--chunk-size", type=int, default=4096)
    sp.add_argument("--lwf-threshold", type=int, default=DEFAULT_LWF_THRESHOLD)

    sp = stamped(cmd("put", cmd_put, help="store a local file at a path"))
    sp.add_argument("file")
    sp.add_argument("path")
    sp.add_argument("--receptor", action="store_true")
    sp.add_argument("--reader", action="append", default=[], metavar="KEY")
    sp.add_argument("--writer", action="append", default=[], metavar="KEY")

    stamped(cmd("mkdir", cmd_mkdir)).add_argument("path")
    stamped(cmd("rm", cmd_rm)).add_argument("path")
    sp = stamped(cmd("cp", cmd_cp, help="copy an entry; shares every block"))
    sp.add_argument("src")
    sp.add_argument("dst")
    rooted(cmd("cat", cmd_cat)).add_argument("path")
    rooted(cmd("ls", cmd_ls)).add_argument("path", nargs="?", default="")
    rooted(cmd("resolve", cmd_resolve)).add_argument("path", nargs="?", default="")
    rooted(cmd("log", cmd_log)).add_argument("path", nargs="?", default="")
    sp = stamped(cmd("revert", cmd_revert))
    sp.add_argument("path")
    sp.add_argument("version", metavar="stamp")
    sp = cmd("forks", cmd_forks)
    sp.add_argument("a")
    sp.add_argument("b")
    cmd("stats", cmd_stats)
    sp = cmd("collision", cmd_collision, needs_ws=False, help="digest collision probability")
    sp.add_argument("n", help="number of blocks, integer or B^E")
    sp.add_argument("bits", type=int, nargs="?", default=512)

    sp = cmd("keygen", cmd_keygen)
    sp.add_argument("--seed")
    sp.add_argument("--out")
    sp = rooted(cmd("sign", cmd_sign))
    sp.add_argument("path", nargs="?", default="")
    sp.add_argument("--out")
    sp.add_argument("--identity")
    sp = rooted(cmd("verify", cmd_verify))
    sp.add_argument("sigfile")
    sp.add_argument("--path")

    cert = cmd("cert", None).add_subparsers(dest="cert_command", required=True)
    sp = cmd("issue", cmd_cert_issue, parent=cert)
    sp.add_argument("member")
    sp.add_argument("--from", dest="valid_from", required=True)
    sp.add_argument("--to", dest="valid_to", required=True)
    sp.add_argument("--out")
    sp.add_argument("--identity")
    sp = cmd("check", cmd_cert_check, parent=cert)
    sp.add_argument("cert")
    sp.add_argument("--at", required=True)
    sp.add_argument("--group")

    sp = rooted(cmd("access", cmd_access))
    sp.add_argument("path")
    sp.add_argument("--requester", required=True)
    sp.add_argument("--cert", action="append", default=[])
    sp.add_argument("--evidence")
    sp.add_argument("--mode", choices=("read", "write"), default="read")
    sp.add_argument("--at", required=True)

    app = cmd("appdir", None).add_subparsers(dest="appdir_command", required=True)
    sp = rooted(cmd("build", cmd_appdir_build, parent=app))
    sp.add_argument("name")
    sp.add_argument("--platform", action="append", default=[], metavar="TAG=PATH", required=True)
    sp.add_argument("--dep", action="append", default=[])
    sp = cmd("closure", cmd_appdir_closure, parent=app)
    sp.add_argument("app")
    sp.add_argument("platform")
    sp = cmd("materialize", cmd_appdir_materialize, parent=app)
    sp.add_argument("app")
    sp.add_argument("platform")
    sp.add_argument("--from", dest="source", required=True, help="block store to fetch from")

    sim = cmd("sim", None).add_subparsers(dest="sim_command", required=True)
    sp = cmd("run", cmd_sim_run, needs_ws=False, parent=sim)
    sp.add_argument("scenario")
    sp.add_argument("--baseline", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv")
    sp = cmd("flashcrowd", cmd_sim_flashcrowd, needs_ws=False, parent=sim)
    sp.add_argument("--clients", type=int, default=1000)
    sp.add_argument("--blocks", type=int, default=100)

    scene = cmd("scene", None).add_subparsers(dest="scene_command", required=True)
    for name, fn in (("render", cmd_scene_render), ("events", cmd_scene_events)):
        sp = rooted(cmd(name, fn, parent=scene))
        sp.add_argument("path", nargs="?", default="")
        sp.add_argument("--width", type=int)
        sp.add_argument("--height", type=int)
        sp.add_argument("--warm", action="append", default=[], metavar="PATH",
                        help="render this scene first, sharing the fragment cache")
    sp = stamped(cmd("click", cmd_scene_click, parent=scene))
    sp.add_argument("path")
    sp.add_argument("x", type=int)
    sp.add_argument("y", type=int)
    sp.add_argument("payload")
    return p


def main(argv=None, stdout: Optional[BinaryIO] = None, stderr: Optional[BinaryIO] = None) -> int:
    stdout = stdout if stdout is not None else sys.stdout.buffer
    stderr = stderr if stderr is not None else sys.stderr.buffer
    parser = build_parser()
    try:
        with contextlib.redirect_stderr(_TextTo(stderr)), contextlib.redirect_stdout(_TextTo(stdout)):
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    con = Console(stdout, stderr, args.porcelain)
    try:
        if args.needs_ws:
            args.fn(args, con, Workspace.load(args.ws))
        else:
            args.fn(args, con)
    except _Quiet as q:
        return q.code
    except CaneError as exc:
        con.err(f"cane: {exc}")
        return exc.exit_code
    except FileNotFoundError as exc:
        con.err(f"cane: {exc}")
        return NotFoundError.exit_code
    except ValueError as exc:
        con.err(f"cane: {exc}")
        return EXIT_USAGE
    finally:
        stdout.flush()
    return EXIT_OK


class _TextTo:
    """Text adapter so argparse's usage output lands on a binary stream."""

    def __init__(self, stream: BinaryIO):
        self.stream = stream

    def write(self, s: str) -> int:
        self.stream.write(s.encode())
        return len(s)

    def flush(self):
        self.stream.flush()


if __name__ == "__main__":
    sys.exit(main())
