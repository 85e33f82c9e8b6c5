"""Software emulation of reduced-precision binary floating-point arithmetic.

Values are always carried in host ``float64`` and constrained to the grid of
an emulated format after every elementary operation: an operation is computed
natively and the result is re-rounded into the target format
(round-to-nearest, ties to even).  Because the host significand (53 bits) is
more than twice as wide as any emulated significand up to 24 bits, this
two-step rounding matches a direct correctly-rounded implementation of
``+ - * /`` for all registered 16- and 32-bit formats; the 64-bit format is
its own fixed point and degenerates to native arithmetic.

Complex arithmetic is built from rounded real operations: an addition costs
two rounded real additions, a multiplication four rounded real multiplies and
two rounded real additions in the schoolbook arrangement
``(ac - bd) + (ad + bc)i``.

Overflow rounds to infinity (never saturates), subnormals are representable
by default, and NaN propagates.  All functions are pure and accept scalars or
arrays of any shape.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from fpmimo.errors import FormatError

__all__ = [
    "FloatFormat",
    "make_format",
    "get_format",
    "registered_formats",
    "round_scalar",
    "rounded_binop",
    "c_binop",
    "gamma_factor",
    "BFLOAT16",
    "FP16",
    "FP32",
    "FP64",
]

# Host carrier is IEEE binary64.
_HOST_SIG_BITS = 53
_HOST_EXP_BITS = 11


@dataclass(frozen=True)
class FloatFormat:
    """An IEEE-style binary floating-point format described by its widths.

    ``sig_bits`` counts significand bits including the implicit leading bit,
    so IEEE binary16 is ``(11, 5)`` and bfloat16 is ``(8, 8)``.  The derived
    quantities follow the usual conventions for round-to-nearest arithmetic:

    * ``unit_roundoff``  u = 2**(-sig_bits)
    * ``x_min``          smallest positive normalized number, 2**(1 - bias)
    * ``x_max``          largest finite number, (2 - 2**(1 - sig_bits)) * 2**bias
    """

    name: str
    sig_bits: int
    exp_bits: int
    subnormals_enabled: bool = True
    unit_roundoff: float = field(init=False, compare=False)
    x_min: float = field(init=False, compare=False)
    x_max: float = field(init=False, compare=False)

    def __post_init__(self):
        if self.sig_bits < 2 or self.exp_bits < 2:
            raise FormatError(
                f"need sig_bits >= 2 and exp_bits >= 2, got "
                f"({self.sig_bits}, {self.exp_bits})"
            )
        if self.sig_bits > _HOST_SIG_BITS or self.exp_bits > _HOST_EXP_BITS:
            raise FormatError(
                f"({self.sig_bits}, {self.exp_bits}) exceeds the float64 "
                f"emulation substrate ({_HOST_SIG_BITS}, {_HOST_EXP_BITS})"
            )
        bias = 2 ** (self.exp_bits - 1) - 1
        object.__setattr__(self, "unit_roundoff", 2.0 ** (-self.sig_bits))
        object.__setattr__(self, "x_min", 2.0 ** (1 - bias))
        object.__setattr__(
            self, "x_max", (2.0 - 2.0 ** (1 - self.sig_bits)) * 2.0 ** bias
        )
        # Smallest representable quantum exponent: spacing of the subnormal
        # grid, 2**(e_min - sig_bits + 1) with e_min = 1 - bias.
        object.__setattr__(self, "_q_min", (1 - bias) - self.sig_bits + 1)
        object.__setattr__(
            self,
            "_native",
            self.sig_bits == _HOST_SIG_BITS
            and self.exp_bits == _HOST_EXP_BITS
            and self.subnormals_enabled,
        )

    @property
    def is_native(self) -> bool:
        """True when rounding into this format is the identity on float64."""
        return self._native

    @property
    def storage_bits(self) -> int:
        """Total encoding width: sign + exponent + stored significand."""
        return self.sig_bits + self.exp_bits

    def round(self, x):
        """Round real values into this format, elementwise.

        Round-to-nearest ties-to-even; magnitudes that round (with unbounded
        exponent) above ``x_max`` become infinity; NaN and infinity propagate;
        idempotent.  Returns a float64 scalar or array.
        """
        if self._native:
            return np.asarray(x, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        out = x.copy()
        flat = out.reshape(-1)
        mask = np.isfinite(flat) & (flat != 0.0)
        v = flat[mask]
        if v.size:
            _, e = np.frexp(v)
            q = np.maximum(e - self.sig_bits, self._q_min)
            # ldexp overflows to inf when the rounded value leaves the float64
            # range entirely; that is the intended result, so silence it.
            with np.errstate(over="ignore"):
                y = np.ldexp(np.rint(np.ldexp(v, -q)), q)
            over = np.abs(y) > self.x_max
            if over.any():
                y[over] = np.copysign(np.inf, y[over])
            if not self.subnormals_enabled:
                tiny = np.abs(y) < self.x_min
                if tiny.any():
                    y[tiny] = np.copysign(0.0, y[tiny])
            flat[mask] = y
        return out if out.ndim else out[()]

    def round_complex(self, z):
        """Round real and imaginary parts independently into this format."""
        if self._native:
            return np.asarray(z, dtype=np.complex128)
        z = np.asarray(z, dtype=np.complex128)
        return self.round(z.real) + 1j * self.round(z.imag)

    def __repr__(self):
        return (
            f"FloatFormat({self.name!r}, sig_bits={self.sig_bits}, "
            f"exp_bits={self.exp_bits})"
        )


def make_format(sig_bits: int, exp_bits: int, *, subnormals_enabled: bool = True,
                name: str | None = None) -> FloatFormat:
    """Construct a format from significand/exponent widths.

    Raises ``FormatError`` for widths the float64 substrate cannot emulate.
    """
    if name is None:
        name = f"p{sig_bits}e{exp_bits}"
    return FloatFormat(name, int(sig_bits), int(exp_bits),
                       subnormals_enabled=subnormals_enabled)


BFLOAT16 = make_format(8, 8, name="bfloat16")
FP16 = make_format(11, 5, name="fp16")
FP32 = make_format(24, 8, name="fp32")
FP64 = make_format(53, 11, name="fp64")

_REGISTRY: dict[str, FloatFormat] = {
    fmt.name: fmt for fmt in (BFLOAT16, FP16, FP32, FP64)
}


def registered_formats() -> dict[str, FloatFormat]:
    """The canonical format registry (name -> FloatFormat)."""
    return dict(_REGISTRY)


def get_format(name: str) -> FloatFormat:
    """Look up a registered format by canonical name."""
    try:
        return _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise FormatError(f"unknown format {name!r}; registry has: {known}") from None


def round_scalar(x: float, fmt: FloatFormat) -> float:
    """Round one real value into ``fmt``."""
    return float(fmt.round(x))


_REAL_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def rounded_binop(op: str, x, y, fmt: FloatFormat):
    """Apply a real binary operation and round the result into ``fmt``.

    Operands are assumed to be representable in ``fmt`` already (round inputs
    first).  Division by zero yields signed infinity or NaN per IEEE rules.
    """
    try:
        func = _REAL_OPS[op]
    except KeyError:
        raise ValueError(f"op must be one of {sorted(_REAL_OPS)}, got {op!r}") from None
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return fmt.round(func(x, y))


def _cadd(xr, xi, yr, yi, fmt):
    """Complex addition as two rounded real additions."""
    return fmt.round(xr + yr), fmt.round(xi + yi)


def _cmul(xr, xi, yr, yi, fmt):
    """Schoolbook complex product: four rounded multiplies, two rounded adds."""
    rr = fmt.round(fmt.round(xr * yr) - fmt.round(xi * yi))
    ri = fmt.round(fmt.round(xr * yi) + fmt.round(xi * yr))
    return rr, ri


def c_binop(op: str, x, y, fmt: FloatFormat):
    """Complex add or multiply with every elementary real operation rounded."""
    x = np.asarray(x, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    with np.errstate(over="ignore", invalid="ignore"):
        if op == "add":
            rr, ri = _cadd(x.real, x.imag, y.real, y.imag, fmt)
        elif op == "mul":
            rr, ri = _cmul(x.real, x.imag, y.real, y.imag, fmt)
        else:
            raise ValueError(f"op must be 'add' or 'mul', got {op!r}")
    out = rr + 1j * np.asarray(ri)
    return out if np.ndim(out) else complex(out)


def gamma_factor(n: int, fmt: FloatFormat) -> float:
    """The accumulation constant n*u / (1 - n*u) for error bounds.

    Returns ``inf`` when ``n*u >= 1`` (the bound is vacuous there).
    """
    nu = n * fmt.unit_roundoff
    if nu >= 1.0:
        return float("inf")
    return nu / (1.0 - nu)
