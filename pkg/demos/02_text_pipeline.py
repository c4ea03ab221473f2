"""Tokenization and entity marking, step by step.

Shows how an instance with head/tail spans becomes a marked, padded id
sequence, and how truncation always sacrifices plain text before markers.
"""

from relmatch import textpipe as tp

instance = tp.Instance(
    tokens="the composer wrote the opera in venice".split(),
    head=(1, 1),          # "composer"
    tail=(4, 4),          # "opera"
    relation=7,
)
description = tp.RelationDescription(
    relation=7,
    tokens="person created a musical work".split(),
    head_span=(0, 0),     # "person"
    tail_span=(3, 4),     # "musical work"
)

vocab = tp.Vocabulary.from_corpus([instance], [description])
print(f"vocabulary: {len(vocab)} entries "
      f"(first 8 are reserved control tokens)")

seq = tp.encode_instance(instance, vocab, 16)
raw = [vocab.id_to_token[i] for i, m in zip(seq.ids, seq.mask) if m]
print("marked instance:", " ".join(raw))
print("decoded content:", " ".join(tp.decode(seq, vocab)))
print(f"head marker at {seq.e_h_pos}, tail marker at {seq.e_t_pos}, "
      f"{int(seq.mask.sum())} real positions")

# a pair sequence carries both texts with a separator
pair = tp.encode_pair(instance, description, vocab, 24)
print("cross-encoder pair:", " ".join(tp.decode(pair, vocab)))

# under a tight budget the description is cut first, markers survive
tight = tp.encode_pair(instance, description, vocab, 16)
print("same pair at max_len=16:", " ".join(tp.decode(tight, vocab)))
