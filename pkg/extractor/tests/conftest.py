import json

import pytest
import torch


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    """A tiny character-level GPT-2 checkpoint saved to disk."""
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    vocab = {"[UNK]": 0, "[EOS]": 1}
    for i, ch in enumerate("abcdefghijklmnopqrstuvwxyz0123456789 +-*/=?.,"):
        vocab[ch] = i + 2
    tok = Tokenizer(models.WordLevel(vocab, unk_token="[UNK]"))
    tok.pre_tokenizer = pre_tokenizers.Split("", "isolated")
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, unk_token="[UNK]", eos_token="[EOS]", pad_token="[EOS]"
    )
    torch.manual_seed(1234)
    config = GPT2Config(
        vocab_size=len(vocab),
        n_positions=256,
        n_embd=32,
        n_layer=2,
        n_head=2,
        bos_token_id=1,
        eos_token_id=1,
    )
    model = GPT2LMHeadModel(config)
    path = tmp_path_factory.mktemp("tiny-model")
    model.save_pretrained(path)
    fast.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def problems_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "problems.ndjson"
    rows = [
        {
            "id": f"q{i}",
            "question": f"what is {i} + {i}?",
            "gold_answer": str(2 * i),
            "difficulty_rating": (i % 10) + 1,
            "benchmark": "tiny",
            "split": "eval",
        }
        for i in range(10)
    ]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path
