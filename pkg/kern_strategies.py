"""
Hypothesis strategies for random **kern documents

`kern_documents(normalized=True)` draws documents already in normal form:
canonical token spelling, ascending chords, **kern spines only, no comments.
With `normalized=False` the same kind of score is spelled the way raw corpus
files are: scrambled token components, descending chords, *met duplicates,
repeated clefs, grace rests, zero-length ties, repairable accidentals, doubled
articulations, short residue such as "4ct", comments and a trailing **dynam
spine. `artifacts=False` keeps only the scrambling, so normalization has
nothing to do but sort.
"""

from fractions import Fraction

from hypothesis import strategies as st

from kernforge.kern import lex_token, pitch_of

METERS = [(2, 4), (3, 4), (4, 4), (6, 8)]
DURATIONS = [
    ("1", Fraction(1)),
    ("2.", Fraction(3, 4)),
    ("2", Fraction(1, 2)),
    ("4.", Fraction(3, 8)),
    ("4", Fraction(1, 4)),
    ("8", Fraction(1, 8)),
]
CANONICAL_ORDER = (
    "duration",
    "dots",
    "pitch",
    "accidental",
    "tie",
    "slur_close",
    "articulation",
    "beam",
    "stem",
    "slur_open",
)
RESIDUE = ["", "", "", "t", "yy", "T"]
CLEFS = ["*clefG2", "*clefF4", "*clefC3"]
KEYS = ["", "*k[]", "*k[f#]", "*k[b-e-]"]


def spell(parts: dict[str, str], order=CANONICAL_ORDER) -> str:
    return "".join(parts.get(name, "") for name in order)


@st.composite
def rhythm(draw, length: Fraction) -> list[tuple[str, Fraction]]:
    remaining = length
    out = []
    while remaining > 0:
        options = [d for d in DURATIONS if d[1] <= remaining]
        choice = draw(st.sampled_from(options))
        out.append(choice)
        remaining -= choice[1]
    return out


@st.composite
def note_parts(draw, duration: str, exclude_letter: str = "") -> dict[str, str]:
    digits, dots = duration.rstrip("."), "." * duration.count(".")
    letter = draw(st.sampled_from([c for c in "cdefgab" if c != exclude_letter]))
    octave = draw(st.integers(1, 2))
    pitch = (letter.upper() if draw(st.booleans()) else letter) * octave
    slur = draw(st.sampled_from(["", "", "(", ")"]))
    return {
        "duration": digits,
        "dots": dots,
        "pitch": pitch,
        "accidental": draw(st.sampled_from(["", "", "#", "-", "n"])),
        "tie": draw(st.sampled_from(["", "", "[", "_", "]"])),
        "slur_close": slur if slur == ")" else "",
        "articulation": draw(st.sampled_from(["", "", "'", "^", ";"])),
        "beam": draw(st.sampled_from(["", "L", "J"])),
        "stem": draw(st.sampled_from(["", "/", "\\"])),
        "slur_open": slur if slur == "(" else "",
    }


def _semitone(parts: dict[str, str]) -> int:
    return pitch_of(lex_token(spell(parts))).semitone


@st.composite
def event_cell(draw, duration: str, normalized: bool, artifacts: bool = True) -> str:
    """One data cell: a rest, a note or a two-note chord"""
    digits, dots = duration.rstrip("."), "." * duration.count(".")
    kind = draw(st.sampled_from(["rest", "note", "note", "chord"]))
    if kind == "rest":
        rest = digits + dots + "r" + draw(st.sampled_from(["", "", "L", "J"]))
        if not normalized and artifacts:
            rest += draw(st.sampled_from(RESIDUE))
        return rest

    notes = [draw(note_parts(duration))]
    if kind == "chord":
        notes.append(draw(note_parts(duration, exclude_letter=notes[0]["pitch"][0].lower())))
        notes.sort(key=_semitone)

    if normalized:
        return " ".join(spell(p) for p in notes)

    spelled = []
    for parts in notes:
        if artifacts:
            if not parts["tie"] and draw(st.integers(0, 5)) == 0:
                parts["tie"] = "[]"
            if parts["accidental"] in ("#", "-") and draw(st.integers(0, 5)) == 0:
                parts["accidental"] += "n"
            elif parts["accidental"] == "n" and draw(st.integers(0, 5)) == 0:
                parts["accidental"] = "nn"
            if parts["articulation"] and draw(st.integers(0, 3)) == 0:
                parts["articulation"] *= 2
            parts["residue"] = draw(st.sampled_from(RESIDUE))
        order = list(draw(st.permutations(CANONICAL_ORDER + ("residue",))))
        spelled.append(spell(parts, order))
    if len(spelled) > 1 and draw(st.booleans()):
        spelled.reverse()
    return " ".join(spelled)


@st.composite
def voice_measure(
    draw, length: Fraction, normalized: bool, artifacts: bool = True
) -> list[tuple[Fraction, str]]:
    return [
        (value, draw(event_cell(text, normalized, artifacts)))
        for text, value in draw(rhythm(length))
    ]


def align(columns: list[list[tuple[Fraction, str]]]) -> list[list[str]]:
    """Data rows at every onset of any column; silent columns get nulls"""
    starts: list[dict[Fraction, str]] = []
    for events in columns:
        onset = Fraction(0)
        by_onset = {}
        for value, text in events:
            by_onset[onset] = text
            onset += value
        starts.append(by_onset)
    onsets = sorted(set().union(*starts))
    return [[column.get(onset, ".") for column in starts] for onset in onsets]


@st.composite
def kern_documents(draw, normalized: bool = True, artifacts: bool = True) -> str:
    noisy = not normalized and artifacts
    width = draw(st.integers(1, 3))
    num, den = draw(st.sampled_from(METERS))
    length = Fraction(num, den)
    measures = draw(st.integers(1, 4))
    dynam = noisy and draw(st.booleans())
    extra = ["*"] if dynam else []

    rows: list[list[str]] = [["**kern"] * width + (["**dynam"] if dynam else [])]
    if noisy and draw(st.booleans()):
        rows.insert(0, ["!!!COM: generated"])
    clefs = [draw(st.sampled_from(CLEFS)) for _ in range(width)]
    rows.append(clefs + extra)
    if noisy and draw(st.booleans()):
        rows.append(clefs + extra)
    key = draw(st.sampled_from(KEYS))
    if key:
        rows.append([key] * width + extra)
    if noisy and (num, den) == (4, 4) and draw(st.booleans()):
        rows.append(["*met(c)"] * width + extra)
    rows.append([f"*M{num}/{den}"] * width + extra)

    for m in range(measures):
        splits = [draw(st.integers(0, 3)) == 0 for _ in range(width)]
        if any(splits):
            rows.append(["*^" if s else "*" for s in splits] + extra)
        columns = []
        for split in splits:
            for _ in range(2 if split else 1):
                columns.append(draw(voice_measure(length, normalized, artifacts)))
        data = align(columns)
        if dynam:
            data = [row + [draw(st.sampled_from([".", ".", "p", "f"]))] for row in data]
        if noisy and draw(st.integers(0, 3)) == 0:
            grace = ["."] * len(data[0])
            grace[0] = "8qr"
            data.insert(draw(st.integers(0, len(data) - 1)), grace)
        if noisy and draw(st.integers(0, 4)) == 0:
            rows.append(["! local"] * len(data[0]))
        rows += data

        pending = list(splits)
        for voice, split in enumerate(splits):
            if not split:
                continue
            merge = []
            for other, still_split in enumerate(pending):
                if other == voice:
                    merge += ["*v", "*v"]
                else:
                    merge += ["*", "*"] if still_split else ["*"]
            rows.append(merge + extra)
            pending[voice] = False

        bar = "==" if m == measures - 1 else f"={m + 1}"
        rows.append([bar] * (width + (1 if dynam else 0)))

    rows.append(["*-"] * (width + (1 if dynam else 0)))
    return "".join("\t".join(row) + "\n" for row in rows)
