"""Scenes stored as directory trees, rendered with a hash-keyed cache.

Each scene element is a directory. Its small files are attributes
(``kind``, ``x``, ``y``, ``w``, ``h``, ``label``, ``fill``), its
subdirectories are child elements drawn inside it, and its receptor entries
receive events. The scene root is itself an element; its ``x``/``y`` place
it on the canvas.

Rendering recurses from the root and memoizes each element's fragment under
the element's manifest id. Fragments exclude the element's own position, so
moving an element re-renders only that element and reuses every fragment
below it.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .castore import BlockId
from .errors import KindError, NoTargetError, SceneError
from .manifest import EntryKind, VersionStamp
from .merklefs import MerkleFS, TreeHandle, split_path

GEOMETRY = ("x", "y", "w", "h")


class ElementKind(enum.Enum):
    WINDOW = "window"
    TEXT = "text"
    BUTTON = "button"
    IMAGE = "image"
    PANE = "pane"


@dataclass(frozen=True)
class Element:
    kind: ElementKind
    x: int
    y: int
    w: int
    h: int
    label: str = ""
    fill: str = "#"
    children: tuple[tuple[str, BlockId], ...] = ()
    receptors: tuple[str, ...] = ()


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def contains(self, px: int, py: int) -> bool:
        return self.x <= px < self.x + self.w and self.y <= py < self.y + self.h

    def shifted(self, dx: int, dy: int) -> "Rect":
        return Rect(self.x + dx, self.y + dy, self.w, self.h)

    def clipped(self, w: int, h: int) -> Optional["Rect"]:
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1, y1 = min(self.x + self.w, w), min(self.y + self.h, h)
        if x1 <= x0 or y1 <= y0:
            return None
        return Rect(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class EventMap:
    """(rectangle, receptor path) pairs, topmost first."""

    entries: tuple[tuple[Rect, str], ...] = ()

    def lookup(self, x: int, y: int) -> Optional[str]:
        for rect, path in self.entries:
            if rect.contains(x, y):
                return path
        return None

    def __len__(self):
        return len(self.entries)


@dataclass
class RenderCache:
    fragments: dict = field(default_factory=dict)
    event_fragments: dict = field(default_factory=dict)
    hits: int = 0
    misses: int = 0
    miss_counts: Counter = field(default_factory=Counter)

    def clear(self):
        self.fragments.clear()
        self.event_fragments.clear()


class Rendered(NamedTuple):
    grid: np.ndarray
    render_calls: int

    @property
    def text(self) -> str:
        return grid_to_text(self.grid)


def grid_to_text(grid: np.ndarray) -> str:
    return "\n".join("".join(row) for row in grid) + "\n"


# renderers --------------------------------------------------------------------


class Renderer:
    """Turns one element into a fragment and places child fragments on it.

    Subclasses choose the representation; the recursion and caching in
    :class:`SceneRenderer` do not depend on it.
    """

    def draw(self, el: Element):
        raise NotImplementedError

    def place(self, fragment, child, x: int, y: int):
        raise NotImplementedError

    def canvas(self, w: int, h: int):
        raise NotImplementedError


class GridRenderer(Renderer):
    """Monospace character grid, one numpy ``<U1`` cell per character."""

    def canvas(self, w, h):
        return np.full((h, w), " ", dtype="<U1")

    def draw(self, el):
        g = self.canvas(el.w, el.h)
        if el.w == 0 or el.h == 0:
            return g
        if el.kind is ElementKind.WINDOW:
            g[0, :] = "-"
            g[-1, :] = "-"
            g[:, 0] = "|"
            g[:, -1] = "|"
            for cy in (0, el.h - 1):
                for cx in (0, el.w - 1):
                    g[cy, cx] = "+"
            _write(g, 0, 2, el.label[: max(el.w - 4, 0)])
        elif el.kind is ElementKind.BUTTON:
            text = f"[{el.label}]"
            row = el.h // 2
            _write(g, row, max((el.w - len(text)) // 2, 0), text[: el.w])
        elif el.kind is ElementKind.TEXT:
            for i in range(el.h):
                _write(g, i, 0, el.label[i * el.w:(i + 1) * el.w])
        elif el.kind is ElementKind.IMAGE:
            g[:, :] = el.fill[:1] or "#"
        return g

    def place(self, fragment, child, x, y):
        h, w = fragment.shape
        ch, cw = child.shape
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + cw, w), min(y + ch, h)
        if x1 > x0 and y1 > y0:
            fragment[y0:y1, x0:x1] = child[y0 - y:y1 - y, x0 - x:x1 - x]
        return fragment


def _write(g, row, col, text):
    for i, ch in enumerate(text):
        if 0 <= col + i < g.shape[1]:
            g[row, col + i] = ch


# scene walking ----------------------------------------------------------------


class SceneRenderer:
    def __init__(self, fs: MerkleFS, renderer: Optional[Renderer] = None):
        self.fs = fs
        self.renderer = renderer or GridRenderer()

    def element(self, dir_id: BlockId, path: str = "") -> Element:
        try:
            manifest = self.fs.load_manifest(dir_id)
        except KindError as exc:
            raise SceneError(path, f"not an element directory ({exc})") from None
        attrs: dict[str, str] = {}
        children = []
        receptors = []
        for e in manifest.entries:
            name = e.text_name
            if e.kind is EntryKind.DIR:
                children.append((name, e.target))
            elif e.kind is EntryKind.RECEPTOR:
                receptors.append(name)
            else:
                raw = e.inline if e.kind is EntryKind.LWF else self.fs.load_contents(e.target)
                try:
                    attrs[name] = raw.decode("utf-8")
                except UnicodeDecodeError:
                    raise SceneError(_join(path, name), "attribute is not UTF-8") from None
        if "kind" not in attrs:
            raise SceneError(path, "missing kind attribute")
        try:
            kind = ElementKind(attrs["kind"].strip())
        except ValueError:
            raise SceneError(_join(path, "kind"), f"unknown element kind {attrs['kind']!r}") from None
        label = attrs.get("label", "")
        geo = {}
        for key in GEOMETRY:
            if key not in attrs:
                continue
            text = attrs[key].strip()
            if not text.isdigit():
                raise SceneError(_join(path, key), f"expected a non-negative integer, got {attrs[key]!r}")
            geo[key] = int(text)
        if kind is ElementKind.BUTTON:
            geo.setdefault("w", len(label) + 2)
            geo.setdefault("h", 1)
        elif kind is ElementKind.TEXT:
            geo.setdefault("w", len(label))
            geo.setdefault("h", 1)
        for key in ("w", "h"):
            if key not in geo:
                raise SceneError(_join(path, key), f"{kind.value} needs {key}")
        return Element(kind, geo.get("x", 0), geo.get("y", 0), geo["w"], geo["h"], label,
                       attrs.get("fill", "#"), tuple(children), tuple(receptors))

    # rendering -----------------------------------------------------------

    def _fragment(self, dir_id: BlockId, el: Element, path: str, cache: Optional[RenderCache],
                  calls: list):
        if cache is not None:
            hit = cache.fragments.get(dir_id)
            if hit is not None:
                cache.hits += 1
                return hit
        calls[0] += 1
        frag = self.renderer.draw(el)
        for name, child_id in el.children:
            cpath = _join(path, name)
            child = self.element(child_id, cpath)
            cfrag = self._fragment(child_id, child, cpath, cache, calls)
            frag = self.renderer.place(frag, cfrag, child.x, child.y)
        if cache is not None:
            if isinstance(frag, np.ndarray):
                frag.setflags(write=False)
            cache.fragments[dir_id] = frag
            cache.misses += 1
            cache.miss_counts[dir_id] += 1
        return frag

    def render(self, scene: TreeHandle, cache: Optional[RenderCache] = None,
               width: Optional[int] = None, height: Optional[int] = None) -> Rendered:
        """Render ``scene``; ``render_calls`` counts elements drawn (cache misses)."""
        root = self.element(scene.root)
        calls = [0]
        frag = self._fragment(scene.root, root, "", cache, calls)
        w = root.x + root.w if width is None else width
        h = root.y + root.h if height is None else height
        canvas = self.renderer.place(self.renderer.canvas(w, h), frag, root.x, root.y)
        return Rendered(canvas, calls[0])

    # events --------------------------------------------------------------

    def _events(self, dir_id: BlockId, el: Element, path: str, cache: Optional[RenderCache]):
        if cache is not None:
            hit = cache.event_fragments.get(dir_id)
            if hit is not None:
                cache.hits += 1
                return hit
        out = []
        for name, child_id in reversed(el.children):
            cpath = _join(path, name)
            child = self.element(child_id, cpath)
            for rect, rel in self._events(child_id, child, cpath, cache):
                placed = rect.shifted(child.x, child.y).clipped(el.w, el.h)
                if placed is not None:
                    out.append((placed, name + "/" + rel))
        if el.w > 0 and el.h > 0:
            for r in el.receptors:
                out.append((Rect(0, 0, el.w, el.h), r))
        result = tuple(out)
        if cache is not None:
            cache.event_fragments[dir_id] = result
            cache.misses += 1
        return result

    def event_map(self, scene: TreeHandle, cache: Optional[RenderCache] = None,
                  width: Optional[int] = None, height: Optional[int] = None) -> EventMap:
        root = self.element(scene.root)
        w = root.x + root.w if width is None else width
        h = root.y + root.h if height is None else height
        entries = []
        for rect, rel in self._events(scene.root, root, "", cache):
            placed = rect.shifted(root.x, root.y).clipped(w, h)
            if placed is not None:
                entries.append((placed, rel))
        return EventMap(tuple(entries))

    def deliver_event(self, scene: TreeHandle, point: tuple[int, int], payload: bytes,
                      stamp: VersionStamp, cache: Optional[RenderCache] = None) -> TreeHandle:
        """Write ``payload`` into the receptor under ``point``; return the new scene."""
        target = self.event_map(scene, cache).lookup(*point)
        if target is None:
            raise NoTargetError(f"no receptor at {point}")
        return self.fs.write_file(scene, split_path(target), payload, stamp, kind=EntryKind.RECEPTOR)


def _join(path: str, name: str) -> str:
    return f"{path}/{name}" if path else name


def element_spec(kind: str, *, x: int = 0, y: int = 0, w: Optional[int] = None,
                 h: Optional[int] = None, label: Optional[str] = None, fill: Optional[str] = None,
                 **children) -> dict:
    """Nested mapping for :meth:`MerkleFS.build_tree` describing one element."""
    spec: dict = {"kind": kind, "x": str(x), "y": str(y)}
    if w is not None:
        spec["w"] = str(w)
    if h is not None:
        spec["h"] = str(h)
    if label is not None:
        spec["label"] = label
    if fill is not None:
        spec["fill"] = fill
    spec.update(children)
    return spec
