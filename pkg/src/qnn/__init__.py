"""Shift-only fixed-point neural network inference engine.

Integer tensors carry a power-of-two quantizer shift; every layer reduces
exact accumulations with a single arithmetic right shift and a saturating
clip, so inference is bit-exact across platforms.  On top of the engine:
aligned-run sparse dense layers, post-training static quantization, MAC
accounting, a block intra-prediction pipeline, and an in-loop filter
control harness.
"""

from .errors import (
    BadMagic,
    BadVersion,
    CalibrationEmpty,
    FormatError,
    InvalidNode,
    MissingModel,
    MissingPlane,
    OutOfFrame,
    QnnError,
    QuantizerOrder,
    ShapeMismatch,
    SlopeOutOfRange,
    Truncated,
    Unquantizable,
)
from .graph import (
    ExecutionContext,
    Graph,
    InputDesc,
    Node,
    OpKind,
    dequantize_graph,
    infer,
    predict_quantizers,
    validate,
)
from .model_io import load_model, load_model_file, save_model, save_model_file
from .quantize import DEFAULT_INPUT_Q, static_quantize
from .sparse import (
    SparsePackedMatrix,
    density,
    pack_sparse,
    sparse_mac_count,
    spmv_q,
)
from .tensor import (
    ElementWidth,
    Tensor,
    choose_shift,
    clip,
    dequantize,
    load_stn1,
    quantize_float,
    quantize_tensor,
    read_stn1,
    save_stn1,
    write_stn1,
)

__version__ = "0.1.0"
