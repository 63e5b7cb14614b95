import pytest
import torch

from causal_seq2seq.corpus import BOS, CLS, EOS
from causal_seq2seq.model import (Ablations, CausalSeq2SeqNet, ModelConfig, count_parameters, decoder_self_mask,
                                  derive_summary_style)

D_V = 30


def make(ablations=None, seed=0, **cfg):
    torch.manual_seed(seed)
    base = dict(d_v=D_V, d_h=32, d_u=4, d_cc=6, d_sc=10, d_ds=6, d_ss=6, n_heads=4, d_ff=64)
    base.update(cfg)
    return CausalSeq2SeqNet(ModelConfig(**base), ablations).double().eval()


def random_doc(b=2, t=9, seed=0):
    g = torch.Generator().manual_seed(seed)
    doc = torch.randint(5, D_V, (b, t), generator=g)
    doc[:, 0] = CLS
    doc[:, -1] = EOS
    return doc


def test_config_invariants():
    with pytest.raises(ValueError):
        ModelConfig(d_v=10, d_ds=8, d_ss=4)
    with pytest.raises(ValueError):
        ModelConfig(d_v=10, d_h=30, n_heads=4)
    p = ModelConfig.full_scale(50000)
    assert (p.d_u, p.k_u, p.d_cc, p.d_sc, p.d_ds, p.d_ss) == (16, 5, 128, 256, 128, 128)
    assert ModelConfig.from_dict(p.to_dict()) == p


def test_full_scale_latent_dimensions():
    m = CausalSeq2SeqNet(ModelConfig(d_v=D_V, d_h=32, d_cc=128, d_sc=256, d_ds=128, d_ss=128, n_heads=4)).eval()
    b = m.encode(random_doc(), [0, 1])
    assert b.h_cc.shape[-1] == 128 and b.h_sc.shape[-1] == 256 and b.h_ds.shape[-1] == 128


def test_eval_mode_returns_means():
    m = make()
    b = m.encode(random_doc(), [0, 3])
    assert torch.equal(b.h_cc, b.posterior.mu_cc) and torch.equal(b.h_ds, b.posterior.mu_ds)
    assert b.h_doc.shape == (2, 32) and b.h_u.shape == (2, 4)


def test_sampling_is_seeded():
    m = make()
    doc = random_doc()
    a = m.encode(doc, [1, 2], torch.Generator().manual_seed(5), sample=True)
    b = m.encode(doc, [1, 2], torch.Generator().manual_seed(5), sample=True)
    c = m.encode(doc, [1, 2], torch.Generator().manual_seed(6), sample=True)
    assert torch.equal(a.h_sc, b.h_sc) and not torch.equal(a.h_sc, c.h_sc)


def test_tid_out_of_range():
    with pytest.raises(ValueError):
        make().encode(random_doc(), [0, 5])
    with pytest.raises(ValueError):
        make().encode(random_doc(), [-1, 0])


def test_h_doc_is_cls_state():
    m = make()
    doc = random_doc()
    memory, _ = m.encode_memory(doc)
    assert torch.equal(m.encode(doc, [0, 0]).h_doc, memory[:, 0])


@pytest.mark.parametrize("h_ds,cr,expected", [([1.0, 2.0], 0.5, [0.5, 1.0]), ([1.0, -2.0], 1.0, [1.0, -2.0]),
                                              ([0.0, 0.0], 0.37, [0.0, 0.0])])
def test_derive_summary_style(h_ds, cr, expected):
    assert derive_summary_style(torch.tensor(h_ds), cr).tolist() == expected


def test_summary_style_per_row():
    m = make()
    b = m.encode(random_doc(), [0, 1])
    cr = torch.tensor([0.25, 0.7], dtype=torch.float64)
    h_ss = m.summary_style(b, cr)
    assert torch.equal(h_ss, b.h_ds * cr[:, None])


def _layer_outputs(decoder):
    captured = []
    hooks = [layer.register_forward_hook(lambda mod, inp, out: captured.append(out[0].detach().clone()))
             for layer in decoder.layers]
    return captured, hooks


@pytest.mark.parametrize("which", ["rec", "pred"])
def test_position_zero_isolated_in_every_layer(which):
    m = make()
    doc = random_doc()
    b = m.encode(doc, [0, 1])
    m.summary_style(b, 0.5)
    dec = m.rec_decoder if which == "rec" else m.pred_decoder
    prefix = torch.randint(5, D_V, (2, 7), generator=torch.Generator().manual_seed(1))
    prefix[:, 0] = BOS
    other = prefix.clone()
    other[:, 1:] = torch.randint(5, D_V, (2, 6), generator=torch.Generator().manual_seed(2))

    def run(p):
        captured, hooks = _layer_outputs(dec)
        if which == "rec":
            logits = m.decode_reconstruction(b.h_cc, b.h_sc, b.h_ds, p, b.memory, b.memory_mask)
        else:
            logits = m.decode_prediction(b.h_cc, b.h_ss, p, b.memory, b.memory_mask)
        for h in hooks:
            h.remove()
        return logits, captured

    la, ca = run(prefix)
    lb, cb = run(other)
    assert torch.equal(la[:, 0], lb[:, 0])
    for x, y in zip(ca, cb):
        assert torch.equal(x[:, 0], y[:, 0])
    assert not torch.equal(la[:, 1:], lb[:, 1:])


def test_self_mask_shape():
    mask = decoder_self_mask(4)
    assert mask.tolist() == [[True, False, False, False], [True, True, False, False],
                             [True, True, True, False], [True, True, True, True]]


def test_logits_shape_and_softmax():
    m = make()
    b = m.encode(random_doc(), [0, 1])
    m.summary_style(b, 0.3)
    prefix = torch.full((2, 5), BOS)
    logits, attns = m.decode_prediction(b.h_cc, b.h_ss, prefix, b.memory, b.memory_mask, return_attention=True)
    assert logits.shape == (2, 5, D_V)
    assert torch.allclose(torch.softmax(logits, -1).sum(-1), torch.ones(2, 5, dtype=torch.float64), atol=1e-12)
    for w in attns:
        assert (w >= 0).all()
        assert torch.allclose(w.sum(-1), torch.ones_like(w.sum(-1)), atol=1e-12)


def test_addition_is_linear_shift_of_logits():
    m = make()
    b = m.encode(random_doc(), [0, 1])
    prefix = torch.full((2, 4), BOS)
    h_x = m.fuse_x(b.h_cc, b.h_sc, b.h_ds)
    logits, hidden = m.decode_reconstruction(b.h_cc, b.h_sc, b.h_ds, prefix, b.memory, b.memory_mask,
                                             return_hidden=True)
    W3 = m.rec_decoder.vocab
    assert torch.allclose(logits, W3(hidden + h_x[:, None]), atol=1e-12)
    shift = W3(hidden) - logits
    assert torch.allclose(shift, -(h_x @ W3.weight.T)[:, None].expand_as(shift), atol=1e-12)


def test_prefix_length_checked():
    m = make(max_doc_len=8, max_sum_len=4)
    b = m.encode(random_doc(t=8), [0, 1])
    m.summary_style(b, 0.5)
    with pytest.raises(ValueError):
        m.decode_prediction(b.h_cc, b.h_ss, torch.full((2, 5), BOS), b.memory, b.memory_mask)
    with pytest.raises(ValueError):
        m.decode_reconstruction(b.h_cc, b.h_sc, b.h_ds, torch.full((2, 9), BOS), b.memory, b.memory_mask)


def test_decoders_do_not_share_stacks():
    m = make()
    rec = {id(p) for p in m.rec_decoder.layers.parameters()} | {id(p) for p in m.rec_decoder.vocab.parameters()}
    pred = {id(p) for p in m.pred_decoder.layers.parameters()} | {id(p) for p in m.pred_decoder.vocab.parameters()}
    assert not rec & pred
    assert count_parameters(m) > 0


def test_generation_contracts():
    m = make()
    b = m.encode(random_doc(), [0, 1])
    m.summary_style(b, 0.5)
    one = m.generate(b.h_cc, b.h_ss, b.memory, b.memory_mask, max_len=1)
    assert all(len(s) <= 1 for s in one)
    g1 = m.generate(b.h_cc, b.h_ss, b.memory, b.memory_mask, max_len=6)
    g2 = m.generate(b.h_cc, b.h_ss, b.memory, b.memory_mask, max_len=6)
    beam = m.generate(b.h_cc, b.h_ss, b.memory, b.memory_mask, max_len=6, strategy="beam", beam_size=1)
    assert g1 == g2 == beam
    wide = m.generate(b.h_cc, b.h_ss, b.memory, b.memory_mask, max_len=6, strategy="beam", beam_size=3)
    assert all(len(s) <= 6 and EOS not in s for s in wide)
    with pytest.raises(ValueError):
        m.generate(b.h_cc, b.h_ss, b.memory, b.memory_mask, max_len=3, strategy="sample")


def _outputs(model, doc, tid):
    b = model.encode(doc, tid)
    model.summary_style(b, 0.4)
    prefix = torch.full((doc.shape[0], 5), BOS)
    rec = model.decode_reconstruction(b.h_cc, b.h_sc, b.h_ds, prefix, b.memory, b.memory_mask)
    pred = model.decode_prediction(b.h_cc, b.h_ss, prefix, b.memory, b.memory_mask)
    return rec, pred


@pytest.mark.parametrize("flag", ["no_addition", "no_replacement", "no_confounder", "no_style_guidance"])
def test_ablation_changes_outputs(flag):
    full = make()
    ablated = make(Ablations(**{flag: True}))
    ablated.load_state_dict(full.state_dict(), strict=False)
    doc = random_doc()
    tid = [2, 4]
    r0, p0 = _outputs(full, doc, tid)
    r1, p1 = _outputs(ablated, doc, tid)
    assert not (torch.equal(r0, r1) and torch.equal(p0, p1))


def test_copy_ds_ablation_mode():
    m = make(Ablations(no_style_guidance=True, style_ablation_mode="copy_ds_posterior"))
    b = m.encode(random_doc(), [0, 1])
    assert torch.equal(m.summary_style(b, 0.3), b.posterior.mu_ds)
    with pytest.raises(ValueError):
        Ablations(style_ablation_mode="other")
