import numpy as np
import numpy.testing as npt
import pytest

from graphlm.errors import ConfigError, InjectionError, StateError
from graphlm.graphtokens import GraphTokenBlock
from graphlm.lm import (LmConfig, adapter_param_dict, attach_lora, build_vocab,
                        embed_with_injection, generate, init_lm_params,
                        lm_backward, lm_forward, merge_lora, parse_label,
                        substring_matches, trainable_fraction)
from graphlm.lm.vocab import dummy_token


def toy_setup(vocab_words="alpha beta gamma delta answer", k_max=2, t_max=3,
              e=16, layers=2, heads=4, seed=0):
    vocab = build_vocab([vocab_words], k_max=k_max, t_max=t_max)
    config = LmConfig(vocab_size=len(vocab), embed_width=e, layers=layers,
                      heads=heads, max_len=64, seed=seed)
    params = init_lm_params(config, dummy_ids=sorted(vocab.dummy_ids))
    return vocab, config, params


def block_for(vocab, gnn_index, t, e, seed=0):
    rng = np.random.default_rng(seed)
    return GraphTokenBlock(gnn_index=gnn_index,
                           vectors=[rng.normal(size=e) for _ in range(t)])


def test_injection_zero_blocks_is_plain_lookup():
    vocab, config, params = toy_setup()
    ids = vocab.encode("alpha beta gamma")
    out = embed_with_injection(params, vocab, ids)
    npt.assert_array_equal(out, params["tok_emb"][ids])


def test_injection_overwrites_exactly_the_dummy_rows():
    vocab, config, params = toy_setup()
    text = f"alpha {dummy_token(0, 0)} {dummy_token(0, 1)} beta"
    ids = vocab.encode(text)
    block = block_for(vocab, 0, 2, config.embed_width)
    positions = {dummy_token(0, 0): 1, dummy_token(0, 1): 2}
    out = embed_with_injection(params, vocab, ids, [block], positions)
    npt.assert_array_equal(out[1], block.vectors[0])
    npt.assert_array_equal(out[2], block.vectors[1])
    plain = params["tok_emb"][ids]
    npt.assert_array_equal(out[0], plain[0])
    npt.assert_array_equal(out[3], plain[3])


def test_injection_rejects_non_increasing_positions():
    vocab, config, params = toy_setup()
    text = f"{dummy_token(0, 0)} {dummy_token(0, 1)}"
    ids = vocab.encode(text)
    block = block_for(vocab, 0, 2, config.embed_width)
    with pytest.raises(InjectionError):
        embed_with_injection(params, vocab, ids, [block],
                             {dummy_token(0, 0): 1, dummy_token(0, 1): 0})


def test_injection_rejects_count_mismatch():
    vocab, config, params = toy_setup()
    ids = vocab.encode(f"alpha {dummy_token(0, 0)}")
    block = block_for(vocab, 0, 2, config.embed_width)
    with pytest.raises(InjectionError):
        embed_with_injection(params, vocab, ids, [block], {dummy_token(0, 0): 1})


def test_injection_rejects_uninjected_dummy():
    vocab, config, params = toy_setup()
    ids = vocab.encode(f"alpha {dummy_token(1, 0)}")
    with pytest.raises(InjectionError, match="uninjected"):
        embed_with_injection(params, vocab, ids)


def test_causality_future_token_does_not_change_past_logits():
    vocab, config, params = toy_setup()
    rng = np.random.default_rng(1)
    embedded = rng.normal(size=(7, config.embed_width))
    logits_full, _ = lm_forward(params, None, embedded, config)
    changed = embedded.copy()
    changed[-1] = rng.normal(size=config.embed_width)
    logits_changed, _ = lm_forward(params, None, changed, config)
    npt.assert_array_equal(logits_full[:-1], logits_changed[:-1])
    assert not np.array_equal(logits_full[-1], logits_changed[-1])


def test_fresh_adapters_leave_logits_unchanged():
    vocab, config, params = toy_setup()
    rng = np.random.default_rng(2)
    embedded = rng.normal(size=(5, config.embed_width))
    base_logits, _ = lm_forward(params, None, embedded, config)
    adapters = attach_lora(params, ["layers.0.attn.wq", "layers.1.attn.wv", "head.W"],
                           r=4, alpha=8.0, seed=3)
    adapted_logits, _ = lm_forward(params, adapters, embedded, config)
    assert np.abs(adapted_logits - base_logits).max() <= 1e-12


def test_attach_lora_parameter_count():
    params = {"W": np.zeros((64, 64))}
    adapters = attach_lora(params, ["W"], r=4)
    assert adapters["W"].num_params() == 2 * 4 * 64
    doubled = attach_lora(params, ["W"], r=8)
    assert doubled["W"].num_params() == 2 * adapters["W"].num_params()


def test_attach_lora_twice_rejected():
    params = {"W": np.zeros((8, 8))}
    adapters = attach_lora(params, ["W"], r=2)
    with pytest.raises(ConfigError):
        attach_lora(params, ["W"], r=2, existing=adapters)


def test_attach_lora_unknown_target():
    with pytest.raises(ConfigError):
        attach_lora({"W": np.zeros((4, 4))}, ["missing"], r=2)


def test_merge_lora_identity_when_b_zero():
    vocab, config, params = toy_setup()
    adapters = attach_lora(params, ["layers.0.attn.wq"], r=2, seed=4)
    merged = merge_lora(params, adapters)
    for name in params:
        npt.assert_array_equal(merged[name], params[name])


def test_merge_lora_matches_adapted_forward():
    vocab, config, params = toy_setup()
    targets = ["layers.0.attn.wq", "layers.0.attn.wv", "layers.1.ffn.w2", "head.W"]
    adapters = attach_lora(params, targets, r=3, alpha=6.0, seed=5)
    rng = np.random.default_rng(6)
    for ad in adapters.values():
        ad.A[...] = rng.normal(0, 0.05, size=ad.A.shape)
        ad.B[...] = rng.normal(0, 0.05, size=ad.B.shape)
    embedded = rng.normal(size=(6, config.embed_width))
    adapted, _ = lm_forward(params, adapters, embedded, config)
    merged = merge_lora(params, adapters)
    merged_logits, _ = lm_forward(merged, None, embedded, config)
    assert np.abs(adapted - merged_logits).max() <= 1e-6


def test_remerge_rejected():
    vocab, config, params = toy_setup()
    adapters = attach_lora(params, ["head.W"], r=2, seed=7)
    merged = merge_lora(params, adapters)
    with pytest.raises(StateError):
        merge_lora(merged, adapters)


def test_trainable_fraction_hand_count():
    config = LmConfig(vocab_size=1000, embed_width=64, layers=2, heads=4, max_len=32, seed=0)
    params = init_lm_params(config)
    targets = [f"layers.{l}.attn.{m}" for l in range(2) for m in ("wq", "wv")]
    adapters = attach_lora(params, targets, r=4)
    base = sum(v.size for v in params.values())
    adapter = 4 * (2 * 4 * 64)  # four 64x64 targets, r(m+n) each
    expected = adapter / (base + adapter)
    assert trainable_fraction(params, adapters) == pytest.approx(expected, rel=1e-12)
    assert 0 < trainable_fraction(params, adapters) < 1


def test_trainable_fraction_linear_in_rank():
    params = {"W": np.zeros((32, 48)), "other": np.zeros(100)}
    f1 = attach_lora(params, ["W"], r=2)
    f2 = attach_lora(params, ["W"], r=4)
    assert f2["W"].num_params() == 2 * f1["W"].num_params()


def test_lora_gradients_match_finite_difference():
    vocab, config, params = toy_setup(e=16, layers=2)
    targets = ["layers.0.attn.wq", "layers.0.attn.wv",
               "layers.1.attn.wq", "layers.1.attn.wv"]
    adapters = attach_lora(params, targets, r=2, alpha=4.0, seed=8)
    rng = np.random.default_rng(9)
    for ad in adapters.values():
        ad.A[...] = rng.normal(0, 0.05, size=ad.A.shape)
        ad.B[...] = rng.normal(0, 0.05, size=ad.B.shape)
    embedded = rng.normal(size=(6, config.embed_width))
    loss_weights = rng.normal(size=(6, config.vocab_size))

    def loss():
        logits, _ = lm_forward(params, adapters, embedded, config)
        return (logits * loss_weights).sum()

    logits, cache = lm_forward(params, adapters, embedded, config)
    grads = lm_backward(params, adapters, config, cache, loss_weights)
    for name, arr in adapter_param_dict(adapters).items():
        flat = arr.reshape(-1)
        gflat = np.asarray(grads[name]).reshape(-1)
        for i in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            h = 1e-5 * max(1.0, abs(flat[i]))
            orig = flat[i]
            flat[i] = orig + h
            lp = loss()
            flat[i] = orig - h
            lm_val = loss()
            flat[i] = orig
            fd = (lp - lm_val) / (2 * h)
            assert abs(fd - gflat[i]) <= 1e-4 * max(1e-6, abs(fd), abs(gflat[i]))


def test_generate_empty_when_max_new_zero():
    vocab, config, params = toy_setup()
    ids = vocab.encode("alpha beta")
    assert generate(params, None, config, vocab, ids, max_new=0) == ""


def test_generate_deterministic():
    vocab, config, params = toy_setup()
    ids = vocab.encode("alpha beta gamma")
    a = generate(params, None, config, vocab, ids, max_new=5)
    b = generate(params, None, config, vocab, ids, max_new=5)
    assert a == b


def test_generate_stops_at_end_token():
    vocab, config, params = toy_setup()
    ids = vocab.encode("alpha")
    embedded = embed_with_injection(params, vocab, ids)
    _, cache = lm_forward(params, None, embedded, config)
    # point the <end> column along the final hidden state so it wins greedily
    params["head.W"][:, vocab.end_id] = 1000.0 * cache["y"][-1]
    assert generate(params, None, config, vocab, ids, max_new=5) == ""


def test_generate_never_emits_reserved_tokens():
    vocab, config, params = toy_setup()
    rng = np.random.default_rng(11)
    params["head.W"][...] = rng.normal(size=params["head.W"].shape)
    out = generate(params, None, config, vocab, vocab.encode("alpha beta"), max_new=6)
    assert "<gtok" not in out and "<pad>" not in out and "<unk>" not in out


def test_parse_label_exact():
    classes = ["Neural_Networks", "Probabilistic_Methods"]
    assert parse_label("Neural_Networks", classes) == 0


def test_parse_label_substring_with_normalization():
    classes = ["Neural_Networks", "Probabilistic_Methods"]
    assert parse_label("the answer is probabilistic methods", classes) == 1


def test_parse_label_failure():
    assert parse_label("banana", ["Neural_Networks", "Theory"]) is None


def test_parse_label_ambiguous_lists_candidates():
    classes = ["Theory", "Game_Theory"]
    text = "maybe theory or game theory"
    assert parse_label(text, classes) is None
    assert set(substring_matches(text, classes)) == {"Theory", "Game_Theory"}


def test_parse_label_empty_classes_rejected():
    with pytest.raises(ValueError):
        parse_label("x", [])
