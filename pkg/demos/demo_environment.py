"""Walk through the tactic environment: parse a goal, apply tactics step by
step, watch a proof close, and see how the corpus generator packages the
same machinery into verified training data.

Run: python demos/demo_environment.py
"""

import numpy as np

from flowprover import apply_tactic, build_corpus, parse_formula, parse_tactic
from flowprover.corpus import generate_theorem
from flowprover.env import initial_state, replay

print("== a proof, one tactic at a time ==")
# and-commutativity needs five tactics; note that hypothesis arguments are
# positions in the hypothesis list, while the displayed names (h2, h3, ...)
# follow arrival order
state = initial_state(parse_formula("a & b -> b & a"))
script = ["intro", "destruct h1", "split", "exact h2", "exact h1"]
print(f"goal: {state.render()}")
for text in script:
    result = apply_tactic(state, parse_tactic(text))
    if result.proved:
        print(f"{text:12s} -> proved")
        break
    if result.failed:
        print(f"{text:12s} -> error {result.error.value}")
        break
    state = result.state
    print(f"{text:12s} -> {state.render()}")

print()
print("== errors are outcomes, not exceptions ==")
state = initial_state(parse_formula("a -> a"))
for text in ["split", "exact h1", "intro"]:
    result = apply_tactic(state, parse_tactic(text))
    outcome = "ok" if result.ok else ("proved" if result.proved else result.error.value)
    print(f"{text:12s} on {state.render():24s} -> {outcome}")

print()
print("== template-generated theorems carry verified proofs ==")
rng = np.random.default_rng(42)
for target_len in (2, 3, 3):
    thm = generate_theorem(rng, target_len)
    proof = ", ".join(t.render() for t in thm.gt_proof)
    check = replay(thm.initial_state, list(thm.gt_proof))
    print(f"|- {thm.goal_text:40s} proof: [{proof}] replay: {check.kind.value}")

print()
print("== a small corpus split ==")
split = build_corpus(7, train_size=30, valid_size=6)
lengths = [len(t.gt_proof) for t in split.train]
print(f"train {len(split.train)}, valid {len(split.valid)}; "
      f"train proof lengths: {{2: {lengths.count(2)}, 3: {lengths.count(3)}}}")
