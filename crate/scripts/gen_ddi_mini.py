"""Regenerates fixtures/ddi_mini. Deterministic; run from the repo root."""
import json
import math
import os
import random
import statistics

OUT = os.path.join("fixtures", "ddi_mini")
LABELS = ["advise", "effect", "int", "mechanism"]
rng = random.Random(7)

# (id, sentence, e1, e2, gold, hard)
HARD = [
    ("h01", "Aspirin did not alter the anticoagulant effect of warfarin in healthy volunteers.", "Aspirin", "warfarin", ["effect"]),
    ("h02", "Rifampin lowered simvastatin exposure, but the clinical relevance remains small.", "Rifampin", "simvastatin", ["mechanism"]),
    ("h03", "Omeprazole may potentially reduce the antiplatelet activity of clopidogrel.", "Omeprazole", "clopidogrel", ["effect"]),
    ("h04", "Cyclosporine raises the blood levels of digoxin.", "Cyclosporine", "digoxin", ["mechanism"]),
    ("h05", "Erythromycin and cimetidine both increase theophylline serum concentrations.", "Erythromycin", "theophylline", ["mechanism"]),
    ("h06", "Phenytoin, which is widely prescribed for seizure control in adults and children and which has a narrow therapeutic index that requires regular monitoring of plasma levels in most patients, reduces lithium clearance.", "Phenytoin", "lithium", ["mechanism"]),
    ("h07", "Fluconazole did not affect ibuprofen clearance when given with quinidine.", "Fluconazole", "ibuprofen", ["mechanism"]),
    ("h08", "The interaction between warfarin and ibuprofen remains unclear in elderly patients.", "warfarin", "ibuprofen", ["int"]),
    ("h09", "Quinidine increases digoxin plasma concentrations markedly.", "Quinidine", "digoxin", ["mechanism"]),
    ("h10", "Cimetidine increases the plasma levels of lithium.", "Cimetidine", "lithium", ["mechanism"]),
    ("h11", "Methotrexate toxicity was not enhanced by omeprazole in this cohort.", "Methotrexate", "omeprazole", ["effect"]),
    ("h12", "Ibuprofen likely increases lithium concentrations, so doses should be reduced.", "Ibuprofen", "lithium", ["advise"]),
    ("h13", "Aspirin reduced ibuprofen binding in vitro, however no change was seen in vivo.", "Aspirin", "ibuprofen", ["mechanism"]),
    ("h14", "Rifampin, a potent inducer that is given for several months in tuberculosis regimens and that interacts with many commonly used drugs in daily clinical practice in hospitals, lowers warfarin levels.", "Rifampin", "warfarin", ["mechanism"]),
    ("h15", "Simvastatin exposure could rise when erythromycin or fluconazole is added.", "Simvastatin", "erythromycin", ["mechanism"]),
    ("h16", "Cyclosporine does not, however, strongly alter digoxin levels when quinidine is co-administered.", "Cyclosporine", "digoxin", ["effect"]),
]

TEMPLATES = [
    ("{A} increases the plasma concentration of {B}.", ["mechanism"]),
    ("{A} enhances the hypotensive effect of {B}.", ["effect"]),
    ("Concomitant use of {A} and {B} should be avoided.", ["advise"]),
    ("{A} interacts with {B}.", ["int"]),
    ("{A} decreases the absorption of {B}.", ["mechanism"]),
    ("Caution is advised when {A} is combined with {B}.", ["advise"]),
    ("{A} potentiates the sedative effect of {B}.", ["effect"]),
    ("{A} was administered before {B} in separate sessions.", []),
    ("{A} increases the toxicity of {B}, and the combination should be avoided.", ["advise", "effect"]),
]
PLAIN = ["atenolol", "diazepam", "furosemide", "metformin", "insulin", "propranolol",
         "alprazolam", "haloperidol", "sertraline", "tramadol", "amiodarone", "verapamil"]
EXTRA_EASY = [
    ("e31", "Rifampin reduces the plasma concentration of diazepam.", "Rifampin", "diazepam", ["mechanism"]),
    ("e32", "Atenolol did not change the clearance of metformin.", "Atenolol", "metformin", []),
    ("e33", "Verapamil may increase the plasma levels of propranolol.", "Verapamil", "propranolol", ["mechanism"]),
    ("e34", "Sertraline and tramadol should not be combined, although the risk is small.", "Sertraline", "tramadol", ["advise"]),
]


def span(sentence, surface):
    start = sentence.index(surface)
    return {"surface": surface, "char_start": start, "char_end": start + len(surface)}


def instance(iid, sentence, e1, e2, gold):
    return {"type": "instance", "id": f"ddi-{iid}", "sentence": sentence,
            "entity1": span(sentence, e1), "entity2": span(sentence, e2),
            "reference_relations": sorted(gold), "split": "train"}


easy = []
n = 0
for i, a in enumerate(PLAIN):
    for j in (1, 5, 7):
        b = PLAIN[(i + j) % len(PLAIN)]
        if len(easy) >= 30:
            break
        tpl, gold = TEMPLATES[n % len(TEMPLATES)]
        s = tpl.format(A=a.capitalize(), B=b)
        easy.append((f"e{len(easy)+1:02d}", s, a.capitalize(), b, gold))
        n += 1
easy += EXTRA_EASY

records = [instance(*h) for h in HARD] + [instance(*e) for e in easy]
records.sort(key=lambda r: r["id"])
records = [records[k] for k in sorted(range(len(records)), key=lambda k: (k * 17) % len(records))]

hard_ids = {f"ddi-{h[0]}" for h in HARD}
preds = []
for r in records:
    gold = set(r["reference_relations"])
    if r["id"] in hard_ids:
        wrong = next(l for l in LABELS if l not in gold)
        scores = [round(rng.uniform(0.05, 0.15), 3) if l in gold else
                  round(rng.uniform(0.88, 0.95), 3) if l == wrong else
                  round(rng.uniform(0.02, 0.08), 3) for l in LABELS]
    else:
        scores = [round(rng.uniform(0.85, 0.97), 3) if l in gold else
                  round(rng.uniform(0.01, 0.08), 3) for l in LABELS]
    preds.append({"instance_id": r["id"], "scores": scores})


def bce(scores, gold):
    eps = 1e-12
    return -sum(math.log(min(max(p, eps), 1 - eps)) if l in gold else math.log(min(max(1 - p, eps), 1 - eps))
                for l, p in zip(LABELS, scores))


losses = {p["instance_id"]: bce(p["scores"], next(set(r["reference_relations"]) for r in records if r["id"] == p["instance_id"])) for p in preds}
vals = list(losses.values())
tau = statistics.fmean(vals) + statistics.pstdev(vals)
selected = {k for k, v in losses.items() if v > tau}
assert selected == hard_ids, (tau, sorted(selected ^ hard_ids))

# Knowledge graph.
CLUSTERS = {
    "induction": ["rifampin", "CYP3A4", "P-glycoprotein", "simvastatin", "midazolam", "warfarin", "CYP2C9", "phenytoin"],
    "transport": ["cyclosporine", "digoxin", "quinidine", "OATP1B1", "nephrotoxicity", "erythromycin"],
    "antifolate": ["methotrexate", "probenecid", "renal tubular secretion", "folate metabolism", "omeprazole", "ibuprofen"],
    "other": ["aspirin", "clopidogrel", "fluconazole", "ketoconazole", "theophylline", "cimetidine", "lithium"],
}
DIM = 8
centers = {c: [rng.gauss(0, 1) for _ in range(DIM)] for c in CLUSTERS}
emb_lines = []
for c, names in CLUSTERS.items():
    for name in names:
        v = [x + rng.gauss(0, 0.35) for x in centers[c]]
        emb_lines.append(name + "\t" + ",".join(f"{x:.6f}" for x in v))

TRIPLES = [
    ("rifampin", "induces", "CYP3A4", "drugbank"),
    ("rifampin", "induces", "P-glycoprotein", "drugbank"),
    ("rifampin", "induces", "CYP2C9", "drugbank"),
    ("simvastatin", "metabolized_by", "CYP3A4", "drugbank"),
    ("midazolam", "metabolized_by", "CYP3A4", "drugbank"),
    ("warfarin", "metabolized_by", "CYP2C9", "drugbank"),
    ("rifampin", "decreases_exposure_of", "warfarin", "label"),
    ("cyclosporine", "inhibits", "P-glycoprotein", "drugbank"),
    ("cyclosporine", "inhibits", "OATP1B1", "drugbank"),
    ("cyclosporine", "causes", "nephrotoxicity", "label"),
    ("digoxin", "substrate_of", "P-glycoprotein", "drugbank"),
    ("quinidine", "inhibits", "P-glycoprotein", "drugbank"),
    ("cyclosporine", "increases_exposure_of", "digoxin", "label"),
    ("methotrexate", "cleared_by", "renal tubular secretion", "drugbank"),
    ("methotrexate", "inhibits", "folate metabolism", "drugbank"),
    ("probenecid", "inhibits", "renal tubular secretion", "drugbank"),
    ("omeprazole", "delays_clearance_of", "methotrexate", "label"),
    ("ibuprofen", "reduces_clearance_of", "methotrexate", "label"),
    ("ketoconazole", "inhibits", "CYP3A4", "drugbank"),
    ("fluconazole", "inhibits", "CYP2C9", "drugbank"),
    ("erythromycin", "inhibits", "CYP3A4", "drugbank"),
    ("cimetidine", "inhibits", "CYP3A4", "drugbank"),
    ("clopidogrel", "activated_by", "CYP2C19", "drugbank"),
]

os.makedirs(OUT, exist_ok=True)
with open(os.path.join(OUT, "corpus.jsonl"), "w") as f:
    f.write(json.dumps({"type": "header", "labels": LABELS}) + "\n")
    for r in records:
        f.write(json.dumps(r) + "\n")
with open(os.path.join(OUT, "predictions.jsonl"), "w") as f:
    for p in preds:
        f.write(json.dumps(p) + "\n")
with open(os.path.join(OUT, "kg_triples.tsv"), "w") as f:
    f.write("# head\trelation\ttail\tsource\n")
    for t in TRIPLES:
        f.write("\t".join(t) + "\n")
with open(os.path.join(OUT, "kg_embeddings.tsv"), "w") as f:
    f.write("# entity\tvector\n")
    f.write("\n".join(emb_lines) + "\n")
with open(os.path.join(OUT, "importance.tsv"), "w") as f:
    for layer in range(32):
        f.write(f"{layer}\t{rng.uniform(0.1, 2.0):.4f}\n")
config = {
    "corpus": "corpus.jsonl",
    "predictions": "predictions.jsonl",
    "kg_triples": "kg_triples.tsv",
    "kg_embeddings": "kg_embeddings.tsv",
    "output_dir": "out",
    "seed": 13,
    "fewshot_k": 4,
    "epoch_budget": 2,
    "backend": {
        "kind": "mock",
        "max_concurrent": 4,
        "mock": {
            "knowledge_entities": ["rifampin", "cyclosporine", "methotrexate"],
            "planted_wrong": ["ddi-h09"],
        },
    },
    "lisa": {"importance": "importance.tsv", "k": 8, "lambda": 0.01},
}
with open(os.path.join(OUT, "config.json"), "w") as f:
    json.dump(config, f, indent=2)
    f.write("\n")
print(f"{len(records)} instances, tau={tau:.6f}, |D_error|={len(selected)}")
