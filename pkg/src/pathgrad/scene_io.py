"""Scene description text format, the built-in box scene, and image I/O.

Scene grammar (one directive per line, ``#`` starts a comment):

    camera eye X Y Z look X Y Z up X Y Z fov F res W H
    material NAME emitter emission V|@K base E absorb 1.0
    material NAME phong ambient V|@K diffuse V|@K specular V|@K exponent V|@K absorb A
    material NAME lambert ambient V|@K diffuse V|@K absorb A
    quad p X Y Z u X Y Z v X Y Z mat NAME
    sphere c X Y Z r R mat NAME
    theta V1 V2 V3 V4 V5 V6 V7

``@K`` binds a parameter to control K (1..7); each control may be bound at
most once per scene.  Images are single-channel float rasters written as
grayscale PFM (32-bit little-endian, bottom row first) with 8-bit PPM
previews.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Quad, Ray, Sphere, Vec3
from .materials import Binding, ControlVector, Material, MaterialKind, N_CONTROLS


class SceneError(Exception):
    """Scene text rejected; ``line`` is 1-based."""

    def __init__(self, line, message):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class SceneSyntaxError(SceneError):
    pass


class SceneSemanticError(SceneError):
    pass


@dataclass
class Camera:
    """Pinhole camera; pixel (0, 0) is the top-left corner of the image."""

    eye: Vec3
    look: Vec3
    up: Vec3
    fov_deg: float  # vertical field of view
    width: int
    height: int
    forward: Vec3 = field(init=False, repr=False)
    right: Vec3 = field(init=False, repr=False)
    upv: Vec3 = field(init=False, repr=False)
    half_w: float = field(init=False, repr=False)
    half_h: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be at least 1x1")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("camera fov must lie in (0, 180) degrees")
        gaze = self.look - self.eye
        if gaze.norm() == 0.0:
            raise ValueError("camera look point coincides with eye")
        self.forward = gaze.normalized()
        r = self.forward.cross(self.up)
        if r.norm() < 1e-12:
            raise ValueError("camera up vector is parallel to the view direction")
        self.right = r.normalized()
        self.upv = self.right.cross(self.forward)
        self.half_h = math.tan(math.radians(self.fov_deg) / 2.0)
        self.half_w = self.half_h * self.width / self.height

    def with_resolution(self, width, height):
        return Camera(self.eye, self.look, self.up, self.fov_deg, width, height)

    def generate_ray(self, x, y, jx, jy):
        """Primary ray through pixel (x, y) jittered by (jx, jy) in [0, 1)."""
        sx = (x + jx) / self.width * 2.0 - 1.0
        sy = 1.0 - (y + jy) / self.height * 2.0
        d = (self.forward
             + self.right * (sx * self.half_w)
             + self.upv * (sy * self.half_h))
        return Ray(self.eye, d.normalized(), 0)


@dataclass
class Scene:
    camera: Camera
    materials: list
    primitives: list
    theta: ControlVector | None = None

    def material_index(self, name):
        for i, m in enumerate(self.materials):
            if m.name == name:
                return i
        raise KeyError(name)


# ---------------------------------------------------------------------------
# parsing

def _parse_float(tok, line):
    try:
        return float(tok)
    except ValueError:
        raise SceneSyntaxError(line, f"expected a number, got {tok!r}") from None


def _parse_int(tok, line):
    try:
        return int(tok)
    except ValueError:
        raise SceneSyntaxError(line, f"expected an integer, got {tok!r}") from None


def _parse_binding(tok, line, bound):
    if tok.startswith("@"):
        k = _parse_int(tok[1:], line)
        if not 1 <= k <= N_CONTROLS:
            raise SceneSemanticError(line, f"control index {k} outside 1..{N_CONTROLS}")
        if k in bound:
            raise SceneSemanticError(line, f"control {k} bound more than once")
        bound.add(k)
        return Binding.ctl(k)
    return Binding.const(_parse_float(tok, line))


class _Tokens:
    def __init__(self, tokens, line):
        self.tokens = tokens
        self.line = line
        self.pos = 0

    def take(self):
        if self.pos >= len(self.tokens):
            raise SceneSyntaxError(self.line, "unexpected end of line")
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def keyword(self, word):
        tok = self.take()
        if tok != word:
            raise SceneSyntaxError(self.line, f"expected {word!r}, got {tok!r}")

    def vec3(self):
        return Vec3(_parse_float(self.take(), self.line),
                    _parse_float(self.take(), self.line),
                    _parse_float(self.take(), self.line))

    def done(self):
        if self.pos != len(self.tokens):
            raise SceneSyntaxError(
                self.line, f"trailing tokens: {' '.join(self.tokens[self.pos:])}")


def parse_scene(text):
    """Parse scene text; raises SceneSyntaxError / SceneSemanticError."""
    camera = None
    materials = []
    mat_index = {}
    primitives = []
    theta = None
    bound_controls = set()
    n_lines = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        n_lines = lineno
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = _Tokens(line.split(), lineno)
        directive = toks.take()

        if directive == "camera":
            toks.keyword("eye")
            eye = toks.vec3()
            toks.keyword("look")
            look = toks.vec3()
            toks.keyword("up")
            up = toks.vec3()
            toks.keyword("fov")
            fov = _parse_float(toks.take(), lineno)
            toks.keyword("res")
            w = _parse_int(toks.take(), lineno)
            h = _parse_int(toks.take(), lineno)
            toks.done()
            try:
                camera = Camera(eye, look, up, fov, w, h)
            except ValueError as exc:
                raise SceneSemanticError(lineno, str(exc)) from None

        elif directive == "material":
            name = toks.take()
            if name in mat_index:
                raise SceneSemanticError(lineno, f"duplicate material name {name!r}")
            kind = toks.take()
            if kind == "emitter":
                toks.keyword("emission")
                emission = _parse_binding(toks.take(), lineno, bound_controls)
                toks.keyword("base")
                base = _parse_float(toks.take(), lineno)
                toks.keyword("absorb")
                absorb = _parse_float(toks.take(), lineno)
                toks.done()
                if absorb != 1.0:
                    raise SceneSemanticError(lineno, "emitter absorb must be 1.0")
                mat = Material.emitter(name, emission, base)
            elif kind == "phong":
                toks.keyword("ambient")
                ambient = _parse_binding(toks.take(), lineno, bound_controls)
                toks.keyword("diffuse")
                diffuse = _parse_binding(toks.take(), lineno, bound_controls)
                toks.keyword("specular")
                specular = _parse_binding(toks.take(), lineno, bound_controls)
                toks.keyword("exponent")
                exponent = _parse_binding(toks.take(), lineno, bound_controls)
                toks.keyword("absorb")
                absorb = _parse_float(toks.take(), lineno)
                toks.done()
                if not 0.0 < absorb < 1.0:
                    raise SceneSemanticError(
                        lineno, "reflective absorb must lie strictly in (0, 1)")
                mat = Material.phong_blinn(name, ambient, diffuse, specular,
                                           exponent, absorb)
            elif kind == "lambert":
                toks.keyword("ambient")
                ambient = _parse_binding(toks.take(), lineno, bound_controls)
                toks.keyword("diffuse")
                diffuse = _parse_binding(toks.take(), lineno, bound_controls)
                toks.keyword("absorb")
                absorb = _parse_float(toks.take(), lineno)
                toks.done()
                if not 0.0 < absorb < 1.0:
                    raise SceneSemanticError(
                        lineno, "reflective absorb must lie strictly in (0, 1)")
                mat = Material.lambert(name, ambient, diffuse, absorb)
            else:
                raise SceneSyntaxError(lineno, f"unknown material kind {kind!r}")
            mat_index[name] = len(materials)
            materials.append(mat)

        elif directive == "quad":
            toks.keyword("p")
            p = toks.vec3()
            toks.keyword("u")
            u = toks.vec3()
            toks.keyword("v")
            v = toks.vec3()
            toks.keyword("mat")
            name = toks.take()
            toks.done()
            if name not in mat_index:
                raise SceneSemanticError(lineno, f"undefined material {name!r}")
            primitives.append(Quad(p, u, v, mat_index[name]))

        elif directive == "sphere":
            toks.keyword("c")
            c = toks.vec3()
            toks.keyword("r")
            r = _parse_float(toks.take(), lineno)
            toks.keyword("mat")
            name = toks.take()
            toks.done()
            if r <= 0.0:
                raise SceneSemanticError(lineno, f"sphere radius must be positive, got {r}")
            if name not in mat_index:
                raise SceneSemanticError(lineno, f"undefined material {name!r}")
            primitives.append(Sphere(c, r, mat_index[name]))

        elif directive == "theta":
            vals = [_parse_float(toks.take(), lineno) for _ in range(N_CONTROLS)]
            toks.done()
            if theta is not None:
                raise SceneSemanticError(lineno, "duplicate theta line")
            theta = ControlVector(tuple(vals))

        else:
            raise SceneSyntaxError(lineno, f"unknown directive {directive!r}")

    if camera is None:
        raise SceneSemanticError(max(n_lines, 1), "scene has no camera line")
    return Scene(camera, materials, primitives, theta)


def _fmt(x):
    return repr(float(x))


def serialize_scene(scene):
    """Canonical scene text; parse_scene(serialize_scene(s)) is equivalent."""
    out = []
    cam = scene.camera
    out.append("camera eye {} {} {} look {} {} {} up {} {} {} fov {} res {} {}".format(
        _fmt(cam.eye.x), _fmt(cam.eye.y), _fmt(cam.eye.z),
        _fmt(cam.look.x), _fmt(cam.look.y), _fmt(cam.look.z),
        _fmt(cam.up.x), _fmt(cam.up.y), _fmt(cam.up.z),
        _fmt(cam.fov_deg), cam.width, cam.height))
    for m in scene.materials:
        if m.kind is MaterialKind.EMITTER:
            out.append(f"material {m.name} emitter emission {m.emission.serialize()} "
                       f"base {_fmt(m.base_emission)} absorb {_fmt(m.absorb)}")
        elif m.kind is MaterialKind.PHONG:
            out.append(f"material {m.name} phong ambient {m.ambient.serialize()} "
                       f"diffuse {m.diffuse.serialize()} specular {m.specular.serialize()} "
                       f"exponent {m.exponent.serialize()} absorb {_fmt(m.absorb)}")
        else:
            out.append(f"material {m.name} lambert ambient {m.ambient.serialize()} "
                       f"diffuse {m.diffuse.serialize()} absorb {_fmt(m.absorb)}")
    for prim in scene.primitives:
        name = scene.materials[prim.material].name
        if isinstance(prim, Sphere):
            out.append(f"sphere c {_fmt(prim.center.x)} {_fmt(prim.center.y)} "
                       f"{_fmt(prim.center.z)} r {_fmt(prim.radius)} mat {name}")
        else:
            out.append("quad p {} {} {} u {} {} {} v {} {} {} mat {}".format(
                _fmt(prim.corner.x), _fmt(prim.corner.y), _fmt(prim.corner.z),
                _fmt(prim.edge_u.x), _fmt(prim.edge_u.y), _fmt(prim.edge_u.z),
                _fmt(prim.edge_v.x), _fmt(prim.edge_v.y), _fmt(prim.edge_v.z),
                name))
    if scene.theta is not None:
        out.append("theta " + " ".join(_fmt(v) for v in scene.theta.values))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# built-in box scene

CORNELL_DEFAULT_THETA = (1.0, 0.1, 0.6, 0.4, 20.0, 0.1, 0.7)
CORNELL_REFLECTIVE_ABSORB = 0.3
CORNELL_BASE_EMISSION = 15.0


def build_cornell_box(width=64, height=64):
    """Closed box scene: six matte walls, one area light, one glossy sphere.

    Box interior spans [0,552] x [0,548] x [0,559]; the camera sits inside
    looking down +z.  All seven controls are bound exactly once.
    """
    theta = ControlVector(CORNELL_DEFAULT_THETA)
    wall = Material.lambert("wall", ambient=Binding.ctl(6), diffuse=Binding.ctl(7),
                            absorb=CORNELL_REFLECTIVE_ABSORB)
    light = Material.emitter("light", emission=Binding.ctl(1),
                             base_emission=CORNELL_BASE_EMISSION)
    ball = Material.phong_blinn("ball", ambient=Binding.ctl(2), diffuse=Binding.ctl(3),
                                specular=Binding.ctl(4), exponent=Binding.ctl(5),
                                absorb=CORNELL_REFLECTIVE_ABSORB)
    materials = [wall, light, ball]
    w_i, l_i, b_i = 0, 1, 2

    primitives = [
        # floor, ceiling, back, front, left, right
        Quad(Vec3(0, 0, 0), Vec3(552, 0, 0), Vec3(0, 0, 559), w_i),
        Quad(Vec3(0, 548, 0), Vec3(552, 0, 0), Vec3(0, 0, 559), w_i),
        Quad(Vec3(0, 0, 559), Vec3(552, 0, 0), Vec3(0, 548, 0), w_i),
        Quad(Vec3(0, 0, 0), Vec3(552, 0, 0), Vec3(0, 548, 0), w_i),
        Quad(Vec3(0, 0, 0), Vec3(0, 548, 0), Vec3(0, 0, 559), w_i),
        Quad(Vec3(552, 0, 0), Vec3(0, 548, 0), Vec3(0, 0, 559), w_i),
        # area light slightly below the ceiling
        Quad(Vec3(213, 547.2, 227), Vec3(130, 0, 0), Vec3(0, 0, 105), l_i),
        Sphere(Vec3(276, 274, 279.5), 110.0, b_i),
    ]
    camera = Camera(eye=Vec3(276, 274, 20), look=Vec3(276, 274, 559),
                    up=Vec3(0, 1, 0), fov_deg=60.0, width=width, height=height)
    scene = Scene(camera, materials, primitives, theta)
    return scene, theta


# ---------------------------------------------------------------------------
# images

@dataclass(eq=False)
class ScalarImage:
    """Single-channel float32 raster, row-major, top row first."""

    width: int
    height: int
    data: np.ndarray  # float32, shape (height, width)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.shape != (self.height, self.width):
            raise ValueError(
                f"data shape {self.data.shape} != (height={self.height}, width={self.width})")

    @classmethod
    def zeros(cls, width, height):
        return cls(width, height, np.zeros((height, width), dtype=np.float32))

    @classmethod
    def from_rows(cls, rows):
        arr = np.asarray(rows, dtype=np.float32)
        return cls(arr.shape[1], arr.shape[0], arr)


def write_pfm(image):
    """Grayscale PFM: 'Pf' header, -1.0 scale (little endian), bottom row first."""
    header = f"Pf\n{image.width} {image.height}\n-1.0\n".encode("ascii")
    body = np.flipud(image.data).astype("<f4").tobytes()
    return header + body


def read_pfm(data):
    """Inverse of write_pfm (grayscale, little- or big-endian)."""
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"Pf":
        raise ValueError("not a grayscale PFM stream")
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise ValueError("malformed PFM header") from None
    endian = "<" if scale < 0 else ">"
    body = parts[3]
    expected = w * h * 4
    if len(body) < expected:
        raise ValueError(f"PFM body truncated: {len(body)} < {expected} bytes")
    arr = np.frombuffer(body[:expected], dtype=endian + "f4").reshape(h, w)
    return ScalarImage(w, h, np.flipud(arr).copy())


def _ppm_bytes(width, height, gray):
    """Wrap a uint8 (h, w) gray raster as binary P6 with equal channels."""
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    return header + rgb.tobytes()


def write_ppm_preview(image, gamma=2.2):
    """8-bit preview: byte = round(255 * clamp(v, 0, 1)^(1/gamma))."""
    v = np.clip(image.data.astype(np.float64), 0.0, 1.0) ** (1.0 / gamma)
    gray = np.floor(255.0 * v + 0.5).astype(np.uint8)
    return _ppm_bytes(image.width, image.height, gray)


def gradient_preview(grad_image):
    """Signed preview: 128 is zero, 0/255 are -/+ the largest magnitude."""
    vals = grad_image.data.astype(np.float64)
    m = max(float(np.max(np.abs(vals))) if vals.size else 0.0, 1e-30)
    gray = np.floor(255.0 * (0.5 + 0.5 * vals / m) + 0.5)
    gray = np.clip(gray, 0.0, 255.0).astype(np.uint8)
    return _ppm_bytes(grad_image.width, grad_image.height, gray)
