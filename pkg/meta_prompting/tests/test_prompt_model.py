import math

import numpy as np
import pytest

from meta_prompting.autodiff import Tensor
from meta_prompting.models.exceptions import ContractError, DimensionError, TemplateError
from meta_prompting.params import Partition
from meta_prompting.prompt_model import (
    AnchorToken,
    PromptModel,
    SoftToken,
    Verbalizer,
    Vocab,
    format_template,
    label_log_scores,
    label_loss,
    label_probs,
    parse_template,
    perturb_template,
    predict_labels,
    render_prompt,
)
from meta_prompting.prompt_model.encoder import SOFT_EMBEDDING, EncoderSpec, encode_soft_prompts, init_encoder
from meta_prompting.prompt_model.pretraining import pretrain_backbone

WORDS = ["alpha", "beta", "gamma", "delta", "the", "topic", "is", "rates", "rise", "category", ":"]


@pytest.fixture
def vocab():
    return Vocab(WORDS)


@pytest.fixture
def model(vocab):
    return PromptModel.build(vocab, num_soft=3, embed_dim=4, hidden_dim=6, encoder_hidden=3, max_seq_len=16, seed=0)


@pytest.fixture
def verbalizer(vocab):
    return Verbalizer.from_label_names(["alpha", "beta", "gamma"], vocab)


def test_special_tokens_come_first(vocab):
    assert vocab.tokens[:5] == ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
    assert vocab.id_of("alpha") == 5
    assert vocab.lookup("unseen") == vocab.unk_id


def test_extend_keeps_existing_ids(vocab):
    extended = vocab.extend(["alpha", "omega"])
    assert extended.id_of("alpha") == vocab.id_of("alpha")
    assert extended.id_of("omega") == len(vocab)
    assert vocab.extend(["alpha"]) is vocab


def test_parse_numbers_soft_tokens_across_groups(vocab):
    template = parse_template("[CLS] {soft:2} {x} {soft:1} the topic is [MASK] [SEP]", vocab)
    soft = [s.index for s in template.slots if isinstance(s, SoftToken)]
    assert soft == [0, 1, 2]
    assert template.num_soft == 3
    assert template.anchor_ids()[0] == vocab.cls_id


def test_format_merges_adjacent_soft_groups(vocab):
    template = parse_template("[CLS] {x} {soft:1} {soft:2} [MASK] [SEP]", vocab)
    text = format_template(template, vocab)
    assert text == "[CLS] {x} {soft:3} [MASK] [SEP]"
    assert parse_template(text, vocab) == template


@pytest.mark.parametrize(
    "text",
    [
        "[CLS] {x} [MASK] [MASK]",
        "[CLS] [MASK] [SEP]",
        "{x} {x} [MASK]",
        "{x} {soft:0} [MASK]",
        "{x} {y} [MASK]",
        "{x} unknownword [MASK]",
    ],
)
def test_malformed_templates_are_rejected(vocab, text):
    with pytest.raises(TemplateError):
        parse_template(text, vocab)


def test_render_places_text_anchors_and_mask(vocab):
    template = parse_template("[CLS] {x} the topic is [MASK] [SEP]", vocab)
    rendered = render_prompt(template, vocab.encode("rates rise"), vocab, max_seq_len=32)
    assert len(rendered) == 8
    assert rendered.mask_index == 6
    assert vocab.decode(rendered.token_ids) == "[CLS] rates rise the topic is [MASK] [SEP]"
    assert rendered.soft_positions == []


def test_render_counts_soft_positions(vocab):
    template = parse_template("[CLS] {x} {soft:3} [MASK] [SEP]", vocab)
    rendered = render_prompt(template, vocab.encode("rates"), vocab, max_seq_len=32)
    assert len(rendered.soft_positions) == 3
    assert [rendered.soft_index[p] for p in rendered.soft_positions] == [0, 1, 2]


def test_render_truncates_text_from_the_right(vocab):
    template = parse_template("[CLS] {x} [MASK] [SEP]", vocab)
    text = vocab.encode("alpha beta gamma delta rates rise")
    rendered = render_prompt(template, text, vocab, max_seq_len=6)
    assert len(rendered) == 6
    assert vocab.decode(rendered.token_ids) == "[CLS] alpha beta gamma [MASK] [SEP]"


def test_render_rejects_template_without_room(vocab):
    template = parse_template("[CLS] {x} the topic is [MASK] [SEP]", vocab)
    with pytest.raises(ContractError):
        render_prompt(template, vocab.encode("rates"), vocab, max_seq_len=6)


def test_perturbation_keeps_specials_and_structure(vocab, rng):
    template = parse_template("[CLS] {soft:1} {x} category : [MASK] {soft:2} [SEP]", vocab)
    assert perturb_template(template, vocab, rng, rate=0.0) == template
    perturbed = perturb_template(template, vocab, rng, rate=1.0)
    assert len(perturbed.slots) == len(template.slots)
    for before, after in zip(template.slots, perturbed.slots):
        if isinstance(before, AnchorToken) and vocab.is_special(before.token_id):
            assert after == before
        elif isinstance(before, AnchorToken):
            assert isinstance(after, AnchorToken) and not vocab.is_special(after.token_id)
        else:
            assert after == before


def test_verbalizer_rejects_shared_answers(vocab):
    with pytest.raises(ContractError):
        Verbalizer([[5], [5, 6]], len(vocab))
    with pytest.raises(ContractError):
        Verbalizer([[5], []], len(vocab))


def test_multi_word_labels_average_answer_probabilities(vocab):
    verbalizer = Verbalizer.from_words({0: ["alpha", "beta"], 1: ["gamma"]}, vocab)
    logits = Tensor(np.random.default_rng(0).normal(size=(2, len(vocab))))
    probs = label_probs(logits, verbalizer).data
    softmax = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs[:, 0], softmax[:, [5, 6]].mean(axis=1))
    np.testing.assert_allclose(probs[:, 1], softmax[:, 7])
    # log-scores differ from log label probabilities by a per-row constant
    diff = label_log_scores(logits, verbalizer).data - np.log(probs)
    np.testing.assert_allclose(diff[:, 0], diff[:, 1])


def test_uniform_logits_give_log_label_count_loss(vocab, verbalizer):
    loss = label_loss(Tensor(np.zeros((2, len(vocab)))), verbalizer, [0, 2])
    assert loss.item() == pytest.approx(math.log(3))


def test_label_probs_ignore_a_shift_of_all_logits(vocab):
    verbalizer = Verbalizer.from_words({0: ["alpha"], 1: ["beta", "gamma"]}, vocab)
    logits = np.random.default_rng(4).normal(size=(3, len(vocab)))
    np.testing.assert_allclose(
        label_probs(Tensor(logits + 7.5), verbalizer).data, label_probs(Tensor(logits), verbalizer).data
    )


def test_label_probs_average_over_answers_by_hand():
    logits = np.log([1.0, 2.0, 3.0, 4.0])
    logits -= np.log(np.exp(logits).sum())
    probs = label_probs(Tensor(logits[None, :]), Verbalizer([[1, 3], [0]], vocab_size=4)).data
    np.testing.assert_allclose(probs, [[0.3, 0.1]])


def test_ties_go_to_the_lowest_label():
    assert predict_labels(np.array([[0.4, 0.4, 0.2], [0.1, 0.3, 0.3]])).tolist() == [0, 1]


def test_restricted_verbalizer_follows_palette(verbalizer):
    local = verbalizer.restrict([2, 0])
    assert local.answers == (verbalizer.answers[2], verbalizer.answers[0])
    with pytest.raises(ContractError):
        verbalizer.restrict([7])


def test_forward_gives_vocabulary_logits(model, vocab, rng):
    params = model.init_params(rng)
    template = parse_template("[CLS] {soft:2} {x} [MASK] [SEP]", vocab)
    logits = model.forward(params, template, [vocab.encode("rates rise"), vocab.encode("alpha")])
    assert logits.shape == (2, len(vocab))
    assert np.all(np.isfinite(logits.data))


def test_template_needing_more_soft_tokens_than_the_encoder(model, vocab, rng):
    template = parse_template("[CLS] {soft:4} {x} [MASK] [SEP]", vocab)
    with pytest.raises(ContractError):
        model.forward(model.init_params(rng), template, [vocab.encode("alpha")])


def test_accuracy_and_predictions_agree(model, vocab, verbalizer, rng):
    params = model.init_params(rng)
    template = parse_template("[CLS] {x} {soft:3} [MASK] [SEP]", vocab)
    texts = [vocab.encode("rates"), vocab.encode("rise"), vocab.encode("alpha beta")]
    predictions = model.predict(params, template, verbalizer, texts)
    assert model.accuracy(params, template, verbalizer, texts, predictions) == 1.0
    loss = model.task_loss(params, template, verbalizer, texts, [0, 1, 2])
    assert loss.shape == () and loss.item() > 0
    with pytest.raises(ContractError):
        model.task_loss(params, template, verbalizer, texts, [0, 1])


def test_backbone_depends_only_on_the_spec(model):
    a = model.init_params(np.random.default_rng(1))
    b = model.init_params(np.random.default_rng(2))
    for name in a.names_in([Partition.BACKBONE]):
        assert np.array_equal(a[name].data, b[name].data)
    assert not np.array_equal(a[SOFT_EMBEDDING].data, b[SOFT_EMBEDDING].data)


def test_frozen_backbone_leaves_only_prompt_trainable(model, rng):
    params = model.init_params(rng, freeze_backbone=True)
    names = params.trainable_names()
    assert names and all(params.partition_of(n) == Partition.PROMPT for n in names)


def test_reinit_prompt_keeps_backbone(model, rng):
    params = model.init_params(rng)
    fresh = model.reinit_prompt(params, rng)
    for name in params.names_in([Partition.BACKBONE]):
        assert fresh[name] is params[name]
    assert not np.array_equal(fresh[SOFT_EMBEDDING].data, params[SOFT_EMBEDDING].data)


def test_check_params_and_spec_hash(model, vocab, rng):
    params = model.init_params(rng)
    model.check_params(params)
    other = model.with_num_soft(5)
    with pytest.raises(ContractError):
        other.check_params(params)
    assert other.spec_hash() != model.spec_hash()
    rebuilt = PromptModel.build(vocab, num_soft=3, embed_dim=4, hidden_dim=6, encoder_hidden=3, max_seq_len=16, seed=0)
    assert rebuilt.spec_hash() == model.spec_hash()


def test_backbone_pretraining_moves_only_the_backbone(model, vocab, rng):
    params = model.init_params(rng)
    texts = [vocab.encode("rates rise"), vocab.encode("alpha beta"), vocab.encode("gamma")]
    answers = [vocab.id_of("alpha"), vocab.id_of("beta"), vocab.id_of("gamma")]
    trained = pretrain_backbone(model, params, texts, answers, steps=3, lr=0.01, batch_size=2, rng=rng)
    for name in params.names_in([Partition.PROMPT]):
        assert np.array_equal(trained[name].data, params[name].data)
    moved = [n for n in params.names_in([Partition.BACKBONE]) if not np.array_equal(trained[n].data, params[n].data)]
    assert moved
    assert trained.trainable == params.trainable


def encoder_weights(spec, seed=0):
    weights = {name: Tensor(w) for name, w in init_encoder(spec, np.random.default_rng(seed)).items()}
    weights.pop(SOFT_EMBEDDING)
    # every MLP unit active, so changes in the LSTM states reach the output
    weights["prompt.mlp.hidden_bias"] = Tensor(np.ones(spec.embed_dim))
    return weights


def test_encoded_tokens_see_both_neighbours():
    spec = EncoderSpec(num_soft=3, embed_dim=4, hidden_dim=3)
    weights = encoder_weights(spec)
    raw = np.random.default_rng(1).normal(size=(3, 4))
    base = encode_soft_prompts(Tensor(raw), weights, spec).data
    for j, i in ((0, 2), (2, 0), (1, 0), (1, 2)):
        moved = raw.copy()
        moved[j] += 0.5
        out = encode_soft_prompts(Tensor(moved), weights, spec).data
        assert np.abs(out[i] - base[i]).max() > 1e-8


def test_zero_encoder_gives_zero_output():
    spec = EncoderSpec(num_soft=2, embed_dim=3, hidden_dim=2)
    weights = {name: Tensor(np.zeros(shape)) for name, shape in spec.shapes().items() if name != SOFT_EMBEDDING}
    out = encode_soft_prompts(Tensor(np.random.default_rng(2).normal(size=(2, 3))), weights, spec)
    np.testing.assert_array_equal(out.data, np.zeros((2, 3)))


def test_single_soft_token_encodes_alone():
    spec = EncoderSpec(num_soft=1, embed_dim=4, hidden_dim=3)
    weights = encoder_weights(spec)
    raw = np.random.default_rng(3).normal(size=(1, 4))
    out = encode_soft_prompts(Tensor(raw), weights, spec).data
    assert out.shape == (1, 4)
    np.testing.assert_array_equal(encode_soft_prompts(Tensor(raw.copy()), weights, spec).data, out)
    assert not np.allclose(encode_soft_prompts(Tensor(raw + 0.5), weights, spec).data, out)


def test_encoder_rejects_wrong_soft_count():
    spec = EncoderSpec(num_soft=2, embed_dim=4, hidden_dim=3)
    with pytest.raises(DimensionError):
        encode_soft_prompts(Tensor(np.zeros((3, 4))), encoder_weights(spec), spec)
