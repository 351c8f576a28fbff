"""Gait phase segmentation on a synthetic two-phase walker.

Twelve kinematic channels come from a latent oscillator that switches
rotation direction at every step; heel and toe pressure channels encode the
true contact events.  NCD sees only the kinematics.  Its debounced mode
transitions are then matched against heel strikes and toe-offs derived from
the pressure channels.
"""
import sys

from hybrid_ncd import gait

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
record, truth = gait.synthetic_gait(40.0, seed=seed)
record = record.window(5000, len(record))  # drop the 10 s warm-up, as the loader would

res = gait.segment_gait(record, seed=seed)
report = res.report_dict()
print(f"phases found: {report['phases']}, analysed window samples {res.window}")
print(f"transition types: {report['transition_types']}, unassigned {report['unassigned_transitions']}")
print(f"{'event':<20}{'truth':>6}{'FP rate':>9}{'FN rate':>9}{'offset ms':>16}")
for row in report["rows"]:
    off = f"{row['mean_offset_ms']:.1f} +/- {row['std_offset_ms']:.1f}"
    print(f"{row['event']:<20}{row['n_truth']:>6}{row['false_positive_rate']:>9.3f}{row['false_negative_rate']:>9.3f}{off:>16}")
