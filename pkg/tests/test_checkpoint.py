import struct

import numpy as np
import pytest

from bgformer.checkpoint import (
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from bgformer.config import TrainConfig
from bgformer.data import gen_synthetic
from bgformer.errors import ParseError
from bgformer.numerics import make_rng
from bgformer.trainer import inference_embed, init_model, model_from_checkpoint, model_to_checkpoint


def _ckpt(step=17, adapter=True):
    cfg = TrainConfig(p=3, k_pc=2, k_neighbors=2, embed_dim=4, n_blocks=2, adapter=adapter)
    rng = make_rng(0)
    model = init_model(cfg, 5, rng)
    for p in model.tensors():
        p.value = rng.standard_normal(p.value.shape)
    return model, model_to_checkpoint(model, cfg, step)


def test_save_load_save_is_byte_identical(tmp_path):
    _, ck = _ckpt()
    save_checkpoint(tmp_path / "a.bgf", ck)
    back = load_checkpoint(tmp_path / "a.bgf")
    save_checkpoint(tmp_path / "b.bgf", back)
    assert (tmp_path / "a.bgf").read_bytes() == (tmp_path / "b.bgf").read_bytes()
    assert back.config == ck.config and back.step == 17
    assert list(back.tensors) == list(ck.tensors)
    assert all(np.array_equal(back.tensors[k], ck.tensors[k]) for k in ck.tensors)


def test_loaded_model_embeds_identically():
    model, ck = _ckpt()
    x = make_rng(1).standard_normal((9, 5))
    again = model_from_checkpoint(decode_checkpoint(encode_checkpoint(ck)))
    assert np.array_equal(inference_embed(x, again), inference_embed(x, model))


def test_layout_header():
    _, ck = _ckpt()
    blob = encode_checkpoint(ck)
    assert blob[:4] == b"BGF1"
    assert struct.unpack_from("<I", blob, 4)[0] == len(ck.tensors)
    (n,) = struct.unpack_from("<H", blob, 8)
    assert blob[10 : 10 + n].decode() == next(iter(ck.tensors))
    assert struct.unpack_from("<Q", blob, len(blob) - 8)[0] == 17


def test_truncation_reports_offset():
    _, ck = _ckpt()
    blob = encode_checkpoint(ck)
    for cut in (2, 9, 40, len(blob) - 1):
        with pytest.raises(ParseError, match=r"offset \d+"):
            decode_checkpoint(blob[:cut])


def test_bad_magic_and_trailing_bytes():
    _, ck = _ckpt()
    blob = encode_checkpoint(ck)
    with pytest.raises(ParseError, match="magic"):
        decode_checkpoint(b"BGF2" + blob[4:])
    with pytest.raises(ParseError, match="trailing"):
        decode_checkpoint(blob + b"\0")


def test_shape_mismatch_rejected():
    _, ck = _ckpt()
    bad = dict(ck.tensors)
    bad["encoder.block0.w_ssa"] = np.zeros((5, 4))
    with pytest.raises(ParseError, match="w_ssa"):
        decode_checkpoint(encode_checkpoint(Checkpoint(bad, ck.config, 1)))
    partial = {k: v for k, v in ck.tensors.items() if k != "encoder.block1.ffn_b1"}
    with pytest.raises(ParseError, match="partial encoder"):
        decode_checkpoint(encode_checkpoint(Checkpoint(partial, ck.config, 1)))
    extra = dict(ck.tensors, bogus=np.zeros((1, 1)))
    with pytest.raises(ParseError, match="bogus"):
        decode_checkpoint(encode_checkpoint(Checkpoint(extra, ck.config, 1)))


def test_encoder_free_checkpoint_round_trips():
    model, ck = _ckpt()
    lean = ck.without_encoder()
    back = decode_checkpoint(encode_checkpoint(lean))
    assert not any(k.startswith("encoder.") for k in back.tensors)
    x = gen_synthetic(make_rng(2), 3, 3, 5, 0.2).features
    assert np.array_equal(inference_embed(x, model_from_checkpoint(back)), inference_embed(x, model))


def test_disabled_adapter_round_trips():
    model, ck = _ckpt(adapter=False)
    assert "adapter.w" not in ck.tensors
    back = model_from_checkpoint(decode_checkpoint(encode_checkpoint(ck)))
    x = make_rng(3).standard_normal((4, 5))
    assert np.array_equal(inference_embed(x, back), inference_embed(x, model))
