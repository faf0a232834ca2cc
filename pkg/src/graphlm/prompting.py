"""Prompt templates, assembly and token budgeting.

Templates are plain text with named slots:

    {instruction}   optional; replaced by a caller-supplied instruction
    {node_text}     target node (or graph) text
    {neighbors}     sampled neighbor texts, joined with " | "
    {classes}       comma-separated class list
    {gnn_run:GCN}   one labeled run of t graph-token placeholders
    {answer}        completion point; must be the last slot

Literal braces are written ``{{`` and ``}}``.  A rendered prompt ends at
the answer slot; the training target (label + end marker) is appended by
``render_training_pair``.
"""

import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import BudgetError, LabelError, TemplateError
from .lm.vocab import END, dummy_token, pretokenize

DEFAULT_TOKEN_BUDGET = 2047
DEFAULT_NEIGHBOR_CHAR_CAP = 256

_SLOT_RE = re.compile(r"\{(instruction|node_text|neighbors|classes|answer)\}"
                      r"|\{gnn_run:([A-Za-z0-9_+-]+)\}")

_NODE_INSTRUCTION = (
    "Decide which category the target node belongs to. You are given the "
    "target node's text, texts of sampled neighboring nodes, and graph "
    "representations of the target produced by several GNN encoders. Each "
    "run of representations is labeled with its encoder type; weigh the "
    "encoders against each other and combine them with the text evidence. "
    "Reply with exactly one category name from the list."
)

_GRAPH_INSTRUCTION = (
    "Decide which category the molecule belongs to. You are given a text "
    "description of the molecule and graph representations of its whole "
    "structure produced by several GNN encoders, each run labeled with its "
    "encoder type. Reply with exactly one category name from the list."
)


@dataclass(frozen=True)
class PromptTemplate:
    text: str
    task: str = "node"
    gnn_runs: tuple = ()

    @classmethod
    def parse(cls, text, task="node"):
        """Validate slot structure and extract the declared GNN runs."""
        if task not in ("node", "graph"):
            raise TemplateError(f"unknown task kind {task!r}")
        runs = []
        answer_seen = 0
        for match in _SLOT_RE.finditer(text):
            if match.group(2) is not None:
                if match.group(2) in runs:
                    raise TemplateError(f"GNN run {match.group(2)!r} declared twice")
                runs.append(match.group(2))
            elif match.group(1) == "answer":
                answer_seen += 1
        if answer_seen != 1:
            raise TemplateError("template needs exactly one {answer} slot")
        for required in ("node_text", "classes"):
            if "{%s}" % required not in text:
                raise TemplateError(f"template is missing the {{{required}}} slot")
        if task == "node" and "{neighbors}" not in text:
            raise TemplateError("node templates need a {neighbors} slot")
        tail = text[text.index("{answer}") + len("{answer}"):]
        if tail.strip():
            raise TemplateError("the {answer} slot must be the final content")
        return cls(text=text, task=task, gnn_runs=tuple(runs))

    @classmethod
    def load(cls, path, task="node"):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read(), task=task)


def make_default_template(gnn_labels, task="node"):
    """The shipped template for a given ordered list of encoder labels."""
    runs = " ".join("{gnn_run:%s}" % label for label in gnn_labels)
    if task == "node":
        body = (
            "Instruction: {instruction}\n"
            "Categories: {classes}\n"
            "Input:\n"
            "Target node text: {node_text}\n"
            "Neighbor node texts: {neighbors}\n"
            "Graph representations: " + runs + "\n"
            "Answer: {answer}"
        )
    else:
        body = (
            "Instruction: {instruction}\n"
            "Categories: {classes}\n"
            "Input:\n"
            "Molecule description: {node_text}\n"
            "Graph representations: " + runs + "\n"
            "Answer: {answer}"
        )
    return PromptTemplate.parse(body, task=task)


def default_instruction(task):
    return _NODE_INSTRUCTION if task == "node" else _GRAPH_INSTRUCTION


@dataclass(frozen=True)
class PromptSpec:
    """A rendered prompt plus everything needed to re-render it."""

    text: str
    tokens: tuple
    dummy_positions: dict
    template: PromptTemplate
    node_text: str
    neighbor_texts: tuple
    class_names: tuple
    tokens_per_node: int
    seed: int
    instruction: str
    target_text: Optional[str] = None

    @property
    def num_gnns(self):
        return len(self.template.gnn_runs)

    @property
    def token_count(self):
        return len(self.tokens)

    def to_record(self):
        """Structured debugging view of the rendered prompt."""
        return {
            "text": self.text,
            "tokens": list(self.tokens),
            "dummy_positions": dict(self.dummy_positions),
            "target_text": self.target_text,
        }


def _render(template, instruction, node_text, neighbor_texts, class_names, t):
    protected = template.text.replace("{{", "\x00").replace("}}", "\x01")
    values = {
        "instruction": instruction,
        "node_text": node_text,
        "neighbors": " | ".join(neighbor_texts),
        "classes": ", ".join(class_names),
        "answer": "",
    }

    def substitute(match):
        if match.group(2) is not None:
            gnn_index = template.gnn_runs.index(match.group(2))
            placeholders = " ".join(dummy_token(gnn_index, i) for i in range(t))
            return f"(GNN type: {match.group(2)}, representations: {placeholders})"
        return values[match.group(1)]

    rendered = _SLOT_RE.sub(substitute, protected)
    return rendered.replace("\x00", "{").replace("\x01", "}").rstrip()


def _spec_from_parts(template, instruction, node_text, neighbor_texts,
                     class_names, t, seed, target_text):
    text = _render(template, instruction, node_text, neighbor_texts, class_names, t)
    tokens = tuple(pretokenize(text))
    positions = {}
    for pos, tok in enumerate(tokens):
        if re.fullmatch(r"<gtok_\d+_\d+>", tok):
            positions[tok] = pos
    expected = len(template.gnn_runs) * t
    if len(positions) != expected:
        raise TemplateError(
            f"rendered prompt holds {len(positions)} placeholders, expected {expected}")
    return PromptSpec(
        text=text, tokens=tokens, dummy_positions=positions, template=template,
        node_text=node_text, neighbor_texts=tuple(neighbor_texts),
        class_names=tuple(class_names), tokens_per_node=t, seed=seed,
        instruction=instruction, target_text=target_text,
    )


def build_prompt(template, graph, node_id, neighbor_sample, k, t, class_names,
                 instruction=None, seed=0, neighbor_char_cap=DEFAULT_NEIGHBOR_CHAR_CAP,
                 node_text_override=None, target_label=None):
    """Assemble a prompt for one node.

    ``neighbor_sample`` comes from graph.sample_neighbors; each neighbor's
    text is individually capped at ``neighbor_char_cap`` characters so one
    long neighbor cannot starve the rest of the budget.
    """
    if len(template.gnn_runs) != k:
        raise TemplateError(
            f"template declares {len(template.gnn_runs)} GNN runs but k={k}")
    if instruction is None:
        instruction = default_instruction(template.task)
    if node_text_override is not None:
        node_text = node_text_override
    else:
        node_text = graph.nodes[node_id].text if node_id is not None else ""
    neighbor_texts = []
    for nbr in neighbor_sample:
        text = graph.nodes[nbr].text
        if neighbor_char_cap is not None:
            text = text[:neighbor_char_cap]
        neighbor_texts.append(text)
    return _spec_from_parts(template, instruction, node_text, neighbor_texts,
                            class_names, t, seed, target_label)


def enforce_budget(spec, max_tokens=DEFAULT_TOKEN_BUDGET):
    """Drop whole neighbors (random order, seeded) until within budget.

    Idempotent; never touches the instruction, target text, class list or
    placeholders.  Raises BudgetError when even the neighbor-free prompt
    is too long.
    """
    if spec.token_count <= max_tokens:
        return spec
    rng = np.random.default_rng(spec.seed)
    keep = list(range(len(spec.neighbor_texts)))
    drop_order = list(rng.permutation(len(keep)))
    current = spec
    for victim in drop_order:
        if current.token_count <= max_tokens:
            return current
        keep.remove(victim)
        current = _spec_from_parts(
            spec.template, spec.instruction, spec.node_text,
            [spec.neighbor_texts[i] for i in keep], spec.class_names,
            spec.tokens_per_node, spec.seed, spec.target_text)
    if current.token_count <= max_tokens:
        return current
    raise BudgetError(
        f"prompt needs {current.token_count} tokens with zero neighbors; "
        f"budget is {max_tokens}")


def render_training_pair(spec, label, vocab):
    """(input ids, target ids, loss mask) for supervised fine-tuning.

    The mask spans the concatenated sequence: zero over the prompt, one
    over the label tokens and the end marker.
    """
    if label not in spec.class_names:
        raise LabelError(f"label {label!r} is not one of {list(spec.class_names)}")
    input_ids = np.asarray(vocab.encode_tokens(list(spec.tokens)), dtype=np.int64)
    target_ids = np.asarray(vocab.encode(label) + [vocab.end_id], dtype=np.int64)
    mask = np.concatenate([
        np.zeros(len(input_ids), dtype=np.int64),
        np.ones(len(target_ids), dtype=np.int64),
    ])
    return input_ids, target_ids, mask
