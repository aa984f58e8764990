"""Regenerates the CLI test fixtures (images, detections, datasets, scripted responses).

Run from this directory: python3 make_fixtures.py
"""
import json
import random
from pathlib import Path

from PIL import Image, ImageDraw

HERE = Path(__file__).parent
GOLDEN = HERE / "golden"
W, H = 320, 240


def bar_chart(path, values, inverted=False, baseline=0.0):
    img = Image.new("RGB", (W, H), "white")
    d = ImageDraw.Draw(img)
    d.rectangle([60, 8, 260, 24], fill=(40, 40, 40))  # title strip
    d.rectangle([250, 40, 310, 70], outline=(0, 0, 0), fill=(230, 230, 250))  # legend
    d.line([50, 30, 50, 200], fill="black", width=2)  # y axis
    d.line([50, 200, 300, 200], fill="black", width=2)  # x axis
    top = max(values)
    span = max(top - baseline, 1e-9)
    bw = 200 // max(len(values), 1)
    for i, v in enumerate(values):
        h = int(160 * (v - baseline) / span)
        x0 = 60 + i * bw
        if inverted:
            d.rectangle([x0, 30, x0 + bw - 6, 30 + h], fill=(200, 40, 40))
        else:
            d.rectangle([x0, 200 - h, x0 + bw - 6, 200], fill=(40, 90, 200))
        d.rectangle([x0, 206, x0 + bw - 10, 214], fill=(90, 90, 90))  # tick label
    img.save(path)


def detections():
    return [
        {"class": "title", "bbox": [60, 8, 200, 16], "score": 0.97},
        {"class": "legend", "bbox": [250, 40, 60, 30], "score": 0.91},
        {"class": "x_axis", "bbox": [50, 198, 250, 18], "score": 0.93},
        {"class": "y_axis", "bbox": [30, 30, 22, 172], "score": 0.9},
    ]


def opts(*texts):
    return [{"label": "ABCDEF"[i], "text": t} for i, t in enumerate(texts)]


def table(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines)


def trace(visual, anchors, mapping, sufficiency, trap, final):
    return (
        f"<Visual_Heuristic>\nStep 1 - Perception Audit: {visual}\n</Visual_Heuristic>\n"
        f"<OCR_Validation>\nStep 2 - Numerical Anchoring: {anchors}\n</OCR_Validation>\n"
        f"<Ambiguity_Resolution>\nStep 3 - Deception Mapping: {mapping}\n"
        f"Step 4 - Sufficiency & Integrity Check: {sufficiency}\n"
        f"Step 5 - Adversarial Trap Rejection: {trap}\n</Ambiguity_Resolution>\n"
        f"<Final_Answer>\n{final}\n</Final_Answer>"
    )


def golden():
    samples, script = [], {}
    det = detections()
    (GOLDEN / "detections.json").write_text(json.dumps(det, indent=1) + "\n")

    def add(sid, values, question, options, answer, trap, misleader, chart_type, *,
            inverted=False, baseline=0.0, ocr=None, oracle=None, explanation=None,
            diag=None, reason=None, fusion=None, ocr_script=None, dets=True):
        bar_chart(GOLDEN / "images" / f"{sid}.png", values, inverted, baseline)
        s = {"id": sid, "image": f"images/{sid}.png", "question": question, "options": options,
             "answer": answer, "misleader": misleader, "chart_type": chart_type}
        if trap:
            s["trap"] = trap
        if oracle:
            s["oracle"] = oracle
        if explanation:
            s["explanation"] = explanation
        if ocr is not None:
            s["ocr_markdown"] = ocr
        if dets:
            s["detections"] = "detections.json"
        samples.append(s)
        for stage, text in [("diagnostic", diag), ("reasoning", reason), ("fusion", fusion), ("ocr", ocr_script)]:
            if text is not None:
                script[f"{stage}/{sid}"] = text

    years = [("2005", 873), ("2006", 721), ("2007", 685), ("2008", 640)]
    add("g01", [v for _, v in years],
        "Did gun deaths rise after the 2005 law was enacted?",
        opts("Yes, deaths increased", "No, deaths decreased", "They stayed the same", "Cannot be inferred"),
        "B", "A", "inverted_axis", "line", inverted=True,
        ocr=table(["Year", "Deaths"], years),
        oracle=[{"category": y, "series": "Deaths", "value": v} for y, v in years],
        explanation="The y axis is inverted so falling deaths are drawn as a rising line.",
        diag="DIAGNOSIS:\n- The y-axis is inverted: 0 is at the top.\n- Title reads 'Gun deaths'.\nACTION DIRECTIVE:\n- Read literal tick values; higher on the canvas means fewer deaths.",
        reason="Directive: read literal tick values. The values fall.\nFinal Answer: B",
        fusion=trace("Directive: read literal tick values. The line looks like it climbs.",
                     "2005 is 873, 2006 is 721, 2007 is 685 and 2008 is 640.",
                     "inverted axis; the y axis is inverted so decline looks like growth.",
                     "four yearly values are enough.",
                     "the apparent rise is an artifact of the flipped axis.",
                     "Final Answer: B"))

    rev = [("2023", 410), ("2022", 380), ("2021", 350)]
    add("g02", [v for _, v in rev],
        "How did revenue change from 2021 to 2023?",
        opts("It increased", "It decreased", "It was flat"),
        "A", "B", "inappropriate_order", "bar",
        ocr=table(["Year", "Revenue"], rev),
        oracle=[{"category": y, "series": "Revenue", "value": v} for y, v in rev],
        explanation="Years are listed in reverse chronological order so growth reads as decline.",
        diag="DIAGNOSIS:\n- The x-axis lists years in reverse chronological order.\nACTION DIRECTIVE:\n- Re-sort the years before judging the trend.",
        reason="Re-sort the years. Final Answer: A",
        fusion=trace("Re-sort the years before judging the trend; bars shrink left to right.",
                     "2021 is 350, 2022 is 380 and 2023 is 410.",
                     "inappropriate order: the categories are reversed chronologically.",
                     "the table is complete.",
                     "the shrinking bars are reversed time, not decline.",
                     "Final Answer: A"))

    add("g03", [5, 7, 6],
        "Which region will lead sales next year?",
        opts("North", "South", "West"),
        "C", "A", "cherry_picking", "bar",
        ocr=table(["Region", "Sales"], [("North", 5), ("South", 7), ("West", 6)]),
        diag="DIAGNOSIS:\n- No structural anomaly detected.\nACTION DIRECTIVE:\n- Read the chart normally.",
        reason="Final Answer: Cannot be Inferred",
        fusion=trace("Read the chart normally; South is tallest.",
                     "North is 5, South is 7 and West is 6.",
                     "no manipulation found.",
                     "the chart has no forecast, so the answer cannot be inferred.",
                     "picking the tallest bar would extrapolate.",
                     "Final Answer: Cannot be Inferred"))

    trunc = [("Q1", 101), ("Q2", 103), ("Q3", 102)]
    add("g04", [v for _, v in trunc],
        "Is Q2 more than double Q1?",
        opts("Yes", "No"),
        "B", "A", "truncated_axis", "bar", baseline=100,
        ocr=table(["Quarter", "Units"], trunc),
        oracle=[{"category": q, "series": "Units", "value": v} for q, v in trunc],
        explanation="The baseline starts at 100 which exaggerates a small difference.",
        diag="DIAGNOSIS:\n- The y-axis starts at 100, a non-zero baseline.\nACTION DIRECTIVE:\n- Compare the literal values, not bar heights.",
        reason="Final Answer: B",
        fusion=trace("The Q2 bar looks three times taller.",
                     "Q1 is 101, Q2 is 103 and Q3 is 102.",
                     "none.",
                     "enough.",
                     "the taller bar is obviously double.",
                     "Final Answer: A"))

    add("g05", [3, 6, 9],
        "Which product sold the most?",
        opts("Alpha", "Beta", "Gamma"),
        "C", None, "none", "bar",
        ocr=table(["Product", "Units"], [("Alpha", 3), ("Beta", 6), ("Gamma", 9)]),
        diag="DIAGNOSIS:\n- No anomaly found.\nACTION DIRECTIVE:\n- Read the chart normally.",
        reason="Final Answer: C",
        fusion=trace("Read the chart normally; Gamma is tallest.",
                     "Alpha is 3, Beta is 6 and Gamma is 9.",
                     "no manipulation.",
                     "complete.",
                     "no trap present.",
                     "Final Answer: C"))

    ytd = [("2021", 120), ("2022", 130), ("2023", 140), ("2024 YTD", 60)]
    add("g06", [v for _, v in ytd],
        "Did output collapse in 2024?",
        opts("Yes, it collapsed", "No, 2024 is a partial year"),
        "B", "A", "inappropriate_aggregation", "bar",
        ocr=table(["Year", "Output"], ytd),
        explanation="The last bar covers only part of 2024.",
        diag="DIAGNOSIS:\n- The last x-axis label is '2024 YTD', an incomplete period.\nACTION DIRECTIVE:\n- Do not compare partial periods with full years.",
        reason="Final Answer: B",
        fusion=trace("Do not compare partial periods; the last bar is short.",
                     "2021 is 120, 2022 is 130, 2023 is 140 and 2024 YTD is 60.",
                     "inappropriate aggregation of an incomplete period.",
                     "the 2024 value is partial.",
                     "the drop is an artifact of the partial year.",
                     "Final Answer: B"))

    add("g07", [20, 40, 30],
        "Which month had the most visitors?",
        opts("January", "February", "March"),
        "B", "C", "inappropriate_scale_function", "line",
        ocr_script=table(["Month", "Visitors"], [("January", 20), ("February", 40), ("March", 30)]),
        diag="DIAGNOSIS:\n- The y-axis uses a logarithmic scale.\n- The February line peaks beyond the canvas edge; the bars exceed the canvas.\nACTION DIRECTIVE:\n- Compare tick labels rather than distances.",
        reason="Final Answer: B",
        fusion=trace("Compare tick labels rather than distances.",
                     "January is 20, February is 40 and March is 30.",
                     "log scale compresses differences.",
                     "enough.",
                     "March only looks close.",
                     "Final Answer: B"))

    add("g08", [8, 4, 2],
        "Which team scored the fewest points?",
        opts("Reds", "Blues", "Greens"),
        "C", "A", "disproportionate_encoding", "pie",
        ocr="Reds 8\nBlues 4\nGreens 2",
        reason="Final Answer: C",
        fusion=trace("No diagnostic report was available.",
                     "Reds is 8, Blues is 4 and Greens is 2.",
                     "unknown.",
                     "the table suffices.",
                     "ignore slice areas.",
                     "Final Answer: C"),
        dets=False)

    add("g09", [15, 25, 35],
        "Which store grew fastest?",
        opts("Downtown", "Airport", "Harbor"),
        "C", "A", "truncated_axis", "bar", baseline=10,
        ocr=table(["Store", "Growth"], [("Downtown", 15), ("Airport", 25), ("Harbor", 35)]),
        diag="DIAGNOSIS:\n- The y-axis is truncated at 10.\nACTION DIRECTIVE:\n- Use literal values.",
        reason="Final Answer: C",
        fusion="Looking at the literal values, Harbor is 35 which is the largest.\nSo the answer is C")

    add("g10", [50, 45, 52, 48],
        "Is the selected window representative of the decade?",
        opts("Yes", "No", "Cannot be inferred"),
        "C", "A", "cherry_picking", "line",
        ocr=table(["Year", "Index"], [("2016", 50), ("2017", 45), ("2018", 52), ("2019", 48)]),
        diag="DIAGNOSIS:\n- The x-axis shows only four of ten years.\nACTION DIRECTIVE:\n- Note that the window is cherry-picked.",
        reason="Final Answer: C",
        fusion=trace("Note that the window is cherry-picked.",
                     "2016 is 50, 2017 is 45, 2018 is 52 and 2019 is 48.",
                     "cherry picking of the time window.",
                     "the other years are missing, so it cannot be inferred.",
                     "agreeing would trust the selected window.",
                     "Final Answer: Cannot be Inferred"))

    with open(GOLDEN / "dataset.jsonl", "w") as f:
        for s in samples:
            f.write(json.dumps(s) + "\n")
    (GOLDEN / "scripted.json").write_text(json.dumps(script, indent=1, sort_keys=True) + "\n")
    (GOLDEN / "backend.json").write_text(json.dumps(
        {"kind": "scripted", "fixtures": "scripted.json", "scripted_ocr": True}, indent=1) + "\n")


WORDS = ("revenue profit cases deaths visitors sales output exports rainfall temperature "
         "users downloads index share votes price cost margin students patients").split()
PLACES = "Ohio Texas Kenya Peru Norway Chile Japan Ghana Spain Quebec".split()


def corpus(n=50, seed=7):
    rng = random.Random(seed)
    categories = ["inverted_axis", "truncated_axis", "inappropriate_order", "inappropriate_aggregation",
                  "inappropriate_scale_function", "cherry_picking", "disproportionate_encoding"]
    with open(HERE / "corpus50.jsonl", "w") as f:
        for i in range(n):
            w, p = rng.choice(WORDS), rng.choice(PLACES)
            y0 = rng.randint(1990, 2015)
            question = f"By how much did {w} in {p} change between {y0} and {y0 + rng.randint(2, 8)}? (case {i})"
            k = rng.randint(2, 6)
            options = opts(*[f"{w.capitalize()} {rng.choice(['rose', 'fell', 'held'])} by {rng.randint(1, 99)}% in {p} #{i}.{j}" for j in range(k)])
            gt = rng.randrange(k)
            trap = (gt + 1) % k
            s = {"id": f"c{i:03d}", "image": f"c{i:03d}.png", "question": question, "options": options,
                 "answer": "ABCDEF"[gt], "trap": "ABCDEF"[trap], "misleader": rng.choice(categories),
                 "chart_type": rng.choice(["bar", "line", "pie"])}
            f.write(json.dumps(s) + "\n")


if __name__ == "__main__":
    golden()
    corpus()
