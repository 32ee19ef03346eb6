"""
Rendering a scene tree with a hash-keyed cache
==============================================

A window is a directory; its buttons are subdirectories. Fragments are
cached by manifest id, so identical subtrees render once and moving a
window redraws only the frame.
"""

from cane import BlockStore, MerkleFS
from cane.merklefs import ReceptorFile
from cane.scenefs import RenderCache, SceneRenderer, element_spec as E

fs = MerkleFS(BlockStore())
button = E("button", x=2, y=1, label="OK", click=ReceptorFile(b""))
panes = dict(left=E("pane", x=1, y=1, w=12, h=3, b=button),
             right=E("pane", x=15, y=1, w=12, h=3, b=button))
scene = fs.build_tree(E("window", w=30, h=6, label="Settings", **panes))

renderer, cache = SceneRenderer(fs), RenderCache()
out = renderer.render(scene, cache)
print(out.text, "render calls:", out.render_calls)

moved = fs.build_tree(E("window", x=4, y=2, w=30, h=6, label="Settings", **panes))
print("after moving the window:", renderer.render(moved, cache).render_calls, "render call")

for rect, receptor in renderer.event_map(scene, cache).entries:
    print(f"  {rect} -> {receptor}")
