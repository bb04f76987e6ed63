"""Encrypted inference for bi-branch CNNs over a CKKS-style slot simulator."""

from .archive import TensorArchive, write_archive
from .backend import active_backend
from .catalog import ArchBundle, branch_shapes, crot_shapes, default_context_params, get, required_levels
from .costs import count_report, format_table, latency_estimate, latency_table, spread_network, spread_stack
from .layers import (
    LayerSpec,
    SlotGrid,
    conv_forward,
    fc_forward,
    plain_layer,
    square_act,
    sum_pool,
)
from .network import (
    BackboneSpec,
    ConnectionSpec,
    DecomposedInput,
    ForwardResult,
    IntegrationSpec,
    NetworkSpec,
    TaintVerdict,
    apply_connection,
    channel_rotate,
    decompose_batch,
    decompose_input,
    feature_integrate,
    forward_backbone,
    forward_bicrypto,
    reference_backbone,
    reference_forward,
    resize_crop,
    taint_check,
)
from .packing import PackLayout, pack, slot_index, unpack
from .sim import (
    Ciphertext,
    HeContext,
    OpRecorder,
    decrypt_vector,
    encrypt_vector,
    he_add,
    he_mul,
    he_rotate,
    make_context,
)

__version__ = "0.1.0"
