from meta_prompting.prompt_model.backbone import BackboneSpec
from meta_prompting.prompt_model.encoder import EncoderSpec, encode_soft_prompts
from meta_prompting.prompt_model.model import PromptModel
from meta_prompting.prompt_model.template import (
    AnchorToken,
    InputText,
    MaskToken,
    PromptTemplate,
    RenderedPrompt,
    SoftToken,
    anchor_words,
    format_template,
    parse_template,
    perturb_template,
    render_prompt,
)
from meta_prompting.prompt_model.verbalizer import (
    Verbalizer,
    label_log_scores,
    label_loss,
    label_probs,
    predict_labels,
)
from meta_prompting.prompt_model.vocab import SPECIAL_TOKENS, Vocab

__all__ = [
    "AnchorToken",
    "BackboneSpec",
    "EncoderSpec",
    "InputText",
    "MaskToken",
    "PromptModel",
    "PromptTemplate",
    "RenderedPrompt",
    "SPECIAL_TOKENS",
    "SoftToken",
    "Verbalizer",
    "Vocab",
    "anchor_words",
    "encode_soft_prompts",
    "format_template",
    "label_log_scores",
    "label_loss",
    "label_probs",
    "parse_template",
    "perturb_template",
    "predict_labels",
    "render_prompt",
]
