"""ENID binary model files (float Networks and QuantizedModels).

Layout, all integers little-endian::

    b"ENID" u16 version  u8 kind (0 float, 1 quantized)
    u16 len + utf-8 family tag ("" when untagged)
    u8 ndim, u32 dims...                      input shape
    [quantized] f64 scale, i32 zero_point     input quantization
    u32 layer count, then per layer:
        u8 kind, u8 activation, u32 in_width, out_width, kernel, in_ch, out_ch
        [quantized] in (f64, i32), out (f64, i32)
        [has params] weight tensor, bias tensor, [quantized] f64 weight scale

A tensor is ``u8 dtype, u8 ndim, u32 dims..., raw little-endian data``.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidParam, MissingFile, ShapeMismatch
from .models import LayerSpec, Network, parse_tag
from .quantizer import QLayer, QuantizedModel, QuantParams

MAGIC = b"ENID"
VERSION = 1
KIND_FLOAT, KIND_QUANT = 0, 1
_LAYER_KINDS = ("dense", "conv2d", "maxpool2x2", "flatten")
_ACTIVATIONS = ("", "relu", "softmax")
_DTYPES = ("<f4", "<f8", "<i1", "<i4")


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.buf = io.BytesIO(data)
        self.source = source

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        chunk = self.buf.read(size)
        if len(chunk) != size:
            raise FormatError(f"{self.source}: truncated file")
        out = struct.unpack("<" + fmt, chunk)
        return out if len(out) > 1 else out[0]

    def tensor(self) -> np.ndarray:
        code, ndim = self.unpack("BB")
        if code >= len(_DTYPES):
            raise FormatError(f"{self.source}: unknown tensor dtype code {code}")
        shape = tuple(self.unpack("I" * ndim)) if ndim > 1 else ((self.unpack("I"),) if ndim else ())
        dt = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        raw = self.buf.read(nbytes)
        if len(raw) != nbytes:
            raise FormatError(f"{self.source}: truncated tensor")
        return np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))

    def qparams(self) -> QuantParams:
        scale, zp = self.unpack("di")
        try:
            return QuantParams(scale, zp)
        except ValueError as exc:
            raise FormatError(f"{self.source}: {exc}") from None

    def at_end(self) -> bool:
        return self.buf.read(1) == b""


def _tensor_bytes(a: np.ndarray) -> bytes:
    dt = np.dtype(a.dtype).newbyteorder("<")
    code = [np.dtype(d) for d in _DTYPES].index(dt)
    head = struct.pack("<BB", code, a.ndim) + struct.pack("<" + "I" * a.ndim, *a.shape)
    return head + np.ascontiguousarray(a, dtype=dt).tobytes()


def _spec_bytes(spec: LayerSpec) -> bytes:
    return struct.pack("<BB5I", _LAYER_KINDS.index(spec.kind), _ACTIVATIONS.index(spec.activation),
                       spec.in_width, spec.out_width, spec.kernel, spec.in_channels, spec.out_channels)


def _qp_bytes(qp: QuantParams) -> bytes:
    return struct.pack("<di", qp.scale, qp.zero_point)


def dumps(model: Network | QuantizedModel) -> bytes:
    quant = isinstance(model, QuantizedModel)
    out = [MAGIC, struct.pack("<HB", VERSION, KIND_QUANT if quant else KIND_FLOAT)]
    tag = str(model.tag).encode() if model.tag is not None else b""
    out.append(struct.pack("<H", len(tag)) + tag)
    shape = tuple(model.input_shape)
    out.append(struct.pack("<B", len(shape)) + struct.pack("<" + "I" * len(shape), *shape))
    if quant:
        out.append(_qp_bytes(model.input_qp))
    out.append(struct.pack("<I", len(model.layers)))
    for i, layer in enumerate(model.layers):
        if quant:
            spec = layer.spec
            out += [_spec_bytes(spec), _qp_bytes(layer.in_qp), _qp_bytes(layer.out_qp)]
            if spec.has_params:
                out += [_tensor_bytes(layer.weight), _tensor_bytes(layer.bias),
                        struct.pack("<d", layer.w_qp.scale)]
        else:
            spec = layer
            out.append(_spec_bytes(spec))
            if spec.has_params:
                w, b = model.params[i]
                out += [_tensor_bytes(np.asarray(w)), _tensor_bytes(np.asarray(b))]
    return b"".join(out)


def loads(data: bytes, source: str = "<bytes>") -> Network | QuantizedModel:
    r = _Reader(data, source)
    if r.buf.read(4) != MAGIC:
        raise FormatError(f"{source}: not an ENID model file")
    version, kind = r.unpack("HB")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    if kind not in (KIND_FLOAT, KIND_QUANT):
        raise FormatError(f"{source}: unknown model kind {kind}")
    tag_len = r.unpack("H")
    tag_text = r.buf.read(tag_len).decode()
    tag = parse_tag(tag_text) if tag_text else None
    ndim = r.unpack("B")
    shape = tuple(r.unpack("I" * ndim)) if ndim > 1 else (r.unpack("I"),)
    input_qp = r.qparams() if kind == KIND_QUANT else None
    n_layers = r.unpack("I")
    specs, params, qlayers = [], [], []
    for _ in range(n_layers):
        k, a, *dims = r.unpack("BB5I")
        if k >= len(_LAYER_KINDS) or a >= len(_ACTIVATIONS):
            raise FormatError(f"{source}: bad layer record")
        spec = LayerSpec(_LAYER_KINDS[k], *dims, activation=_ACTIVATIONS[a])
        specs.append(spec)
        if kind == KIND_QUANT:
            in_qp, out_qp = r.qparams(), r.qparams()
            if spec.has_params:
                w, b = r.tensor(), r.tensor()
                if w.shape != spec.weight_shape() or b.shape != spec.bias_shape():
                    raise FormatError(f"{source}: tensor shapes do not match layer record")
                w_qp = QuantParams(r.unpack("d"), 0)
                w.setflags(write=False)
                b.setflags(write=False)
                qlayers.append(QLayer(spec, in_qp, out_qp, w, b, w_qp))
            else:
                qlayers.append(QLayer(spec, in_qp, out_qp))
        else:
            params.append((r.tensor(), r.tensor()) if spec.has_params else None)
    if not r.at_end():
        raise FormatError(f"{source}: trailing bytes after last layer")
    try:
        if kind == KIND_QUANT:
            Network(tuple(specs), (), shape)  # validates shape composition
            return QuantizedModel(tuple(qlayers), input_qp, shape, tag)
        return Network(tuple(specs), tuple(params), shape, tag)
    except (ValueError, TypeError, ShapeMismatch, InvalidParam) as exc:
        raise FormatError(f"{source}: {exc}") from None


def save_model(model: Network | QuantizedModel, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model))


def load_model(path: str | Path) -> Network | QuantizedModel:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"no such model file: {p}")
    return loads(p.read_bytes(), str(p))
