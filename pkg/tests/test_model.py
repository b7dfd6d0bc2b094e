import numpy as np
import pytest

from rejgen import ndcore as nd
from rejgen.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from rejgen.model import Memory, ModelConfig, ModelError, Seq2SeqModel
from rejgen.vocab import BOS, PAD


@pytest.fixture
def tiny():
    cfg = ModelConfig(n_ids=12, d_model=8, d_ffn=16, max_src_len=10,
                      max_tgt_len=6, dropout=0.0)
    return Seq2SeqModel(cfg, seed=0)


def test_decode_batch_shapes_and_normalization(tiny):
    src = np.array([[3, 4, 5, PAD], [6, 7, PAD, PAD]])
    tgt = np.array([[BOS, 3, 4], [BOS, 5, 6]])
    with nd.no_grad():
        t = tiny.tensors()
        mem = tiny.encode_batch(t, src, src == PAD)
        probs = tiny.decode_batch(t, mem, src == PAD, tgt)
    assert probs.data.shape == (2, 3, 12)
    assert np.allclose(probs.data.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(probs.data >= 0)


def test_teacher_forcing_matches_stepwise(tiny):
    """Full-sequence batched probs equal incremental single-prefix probs."""
    src = [3, 4, 5, 6]
    tgt = [3, 7, 4]
    src_arr = np.array([src])
    tgt_in = np.array([[BOS] + tgt])
    with nd.no_grad():
        t = tiny.tensors()
        mem = tiny.encode_batch(t, src_arr, src_arr == PAD)
        batched = tiny.decode_batch(t, mem, src_arr == PAD, tgt_in).data[0]
    memory = tiny.encode(src)
    for i in range(len(tgt) + 1):
        dist = tiny.decode_step(memory, [BOS] + tgt[:i])
        assert np.allclose(dist.probs, batched[i], atol=1e-12)


def test_causality(tiny):
    """Changing a later target token never changes earlier distributions."""
    src = np.array([[3, 4, 5]])
    a = np.array([[BOS, 3, 4, 5]])
    b = np.array([[BOS, 3, 4, 9]])
    with nd.no_grad():
        t = tiny.tensors()
        mem = tiny.encode_batch(t, src, src == PAD)
        pa = tiny.decode_batch(t, mem, src == PAD, a).data
        pb = tiny.decode_batch(t, mem, src == PAD, b).data
    assert np.allclose(pa[0, :3], pb[0, :3], atol=1e-12)
    assert not np.allclose(pa[0, 3], pb[0, 3])


def test_source_order_sensitivity(tiny):
    """Positional encodings make permuted sources decode differently."""
    d1 = tiny.decode_step(tiny.encode([3, 4, 5]), [BOS])
    d2 = tiny.decode_step(tiny.encode([5, 4, 3]), [BOS])
    assert not np.allclose(d1.probs, d2.probs)


def test_step_many_validates_prefixes(tiny):
    memory = tiny.encode([3, 4])
    with pytest.raises(ModelError):
        memory.step_many(np.zeros((1, 0), dtype=int))
    with pytest.raises(ModelError):
        memory.step_many(np.array([[3, 4]]))  # missing BOS
    with pytest.raises(ModelError):
        memory.step_many(np.full((1, 7), BOS))  # exceeds max_tgt_len


def test_source_validation(tiny):
    with pytest.raises(ModelError):
        tiny.encode([])
    with pytest.raises(ModelError):
        tiny.encode([3, 99])
    with pytest.raises(ModelError):
        tiny.encode([3, 11])  # REJ id in source
    with pytest.raises(ModelError):
        tiny.encode(list(range(3, 3 + 11)))  # longer than max_src_len


def test_length_limits(tiny):
    with nd.no_grad():
        t = tiny.tensors()
        with pytest.raises(ModelError):
            src = np.full((1, 11), 3)
            tiny.encode_batch(t, src, src == PAD)


def test_seeded_init_deterministic():
    cfg = ModelConfig(n_ids=12, d_model=8, d_ffn=16)
    a = Seq2SeqModel(cfg, seed=5)
    b = Seq2SeqModel(cfg, seed=5)
    c = Seq2SeqModel(cfg, seed=6)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


# -- checkpoints -----------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tiny, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny, path)
    loaded = load_checkpoint(path)
    assert loaded.config == tiny.config
    for name, arr in tiny.params.items():
        assert np.array_equal(loaded.params[name], arr)
        assert loaded.params[name].dtype == np.float64
    # saving the loaded model reproduces the file byte-for-byte
    path2 = tmp_path / "m2.ckpt"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b'{"format": "something-else"}\n')
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_unreadable_manifest(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not json at all\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_truncated_blob_names_tensor(tiny, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny, path)
    blob = path.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(blob[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "trunc.ckpt")


def test_checkpoint_config_mismatch_refused(tiny, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny, path)
    other = ModelConfig(n_ids=12, d_model=16, d_ffn=16, max_src_len=10,
                        max_tgt_len=6, dropout=0.0)
    with pytest.raises(CheckpointError, match="d_model"):
        load_checkpoint(path, expect_config=other)
