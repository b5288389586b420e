"""Builds the scripted-backend fixtures shipped in ``hiss/fixtures``.

Run as a script to rewrite the shipped files; ``test_fixtures.py`` checks
that the shipped copies match what this module produces.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from hiss import prompts as P
from hiss.model import LIAR, RAWFC, LabelScheme
from hiss.search import SearchCache, SearchHit, cache_to_json

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "src" / "hiss" / "fixtures"


@dataclass
class Q:
    text: str
    confident: bool
    answer: str  # what the model says unaided
    snippet: str | None = None  # top search result for the question
    only_fact_checks: bool = False  # every hit is a fact-check page


@dataclass
class Sub:
    text: str
    questions: list[Q]
    snippet: str = ""  # search result for the subclaim itself


@dataclass
class ClaimScript:
    id: str
    text: str
    gold: str
    predicted: str
    subs: list[Sub]  # one Sub whose text is the claim means "not split"
    whole: Q | None = None  # the question asked when decomposition is off (split claims only)
    meta: dict = field(default_factory=dict)

    @property
    def split(self) -> bool:
        return not (len(self.subs) == 1 and self.subs[0].text == self.text)


def _qa_block(q: Q) -> str:
    reply = "Yes." if q.confident else "No."
    if q.confident or q.only_fact_checks or q.snippet is None:
        ans = q.answer
    else:
        ans = q.snippet
    return f"{P.QUESTION_PREFIX} {q.text}\n{P.CONFIDENCE_INSTRUCTION} {reply}\n{P.ANSWER_PREFIX} {ans}\n"


def final_line(scheme: LabelScheme, label: str) -> str:
    return f"{P.final_header(scheme)} {label}."


def main_generation(c: ClaimScript, scheme: LabelScheme) -> tuple[str, list[tuple[str, str]]]:
    """HiSS continuation after ``A: `` plus the always-search branch entries."""
    if c.split:
        head = f"{P.DECOMPOSE_SENTINEL} {len(c.subs)} subclaims that are easier to verify:\n"
        head += "\n".join(f"{i}. {s.text}" for i, s in enumerate(c.subs, start=1))
    else:
        head = P.NO_SPLIT_LINE
    # (offset in text right after a confident answer, question)
    confident_marks: list[tuple[int, Q]] = []
    text = head
    for i, sub in enumerate(c.subs, start=1):
        text += "\n" + P.subclaim_header(i if c.split else None) + "\n"
        for q in sub.questions:
            block = _qa_block(q)
            text += block
            if q.confident:
                confident_marks.append((len(text) - 1, q))
        text = text.rstrip("\n")
    text += "\n" + final_line(scheme, c.predicted)
    branches = []
    for offset, q in confident_marks:
        if q.snippet:
            branches.append((f"{P.ANSWER_PREFIX} {q.snippet}", text[offset:]))
    return text, branches


def conversation(c: ClaimScript, scheme: LabelScheme) -> list[dict]:
    text, branches = main_generation(c, scheme)
    entries = [{"match": P.hiss_query(c.text).rstrip(), "continuation": text}]
    for key, cont in branches:
        entries.append({"match": key, "continuation": cont})
    key = P.NO_SPLIT_LINE + "\n" + P.subclaim_header(None)
    if c.split:
        cont = _qa_block(c.whole) + final_line(scheme, c.predicted)
    else:
        cont = text[len(key) + 1:]
    entries.append({"match": key, "continuation": cont})
    last = c.subs[-1].snippet
    if last:
        entries.append({"match": f"{P.ANSWER_PREFIX} {last}", "continuation": final_line(scheme, c.predicted)})
    return entries


def cache_entries(claims: list[ClaimScript]) -> SearchCache:
    cache = SearchCache()
    n = 0

    def url(slug: str) -> str:
        nonlocal n
        n += 1
        return f"https://example.org/{slug}/{n}"

    for c in claims:
        qs = [q for s in c.subs for q in s.questions] + ([c.whole] if c.whole else [])
        for q in qs:
            if q.only_fact_checks:
                cache.put(q.text, [SearchHit(url("fact-check"), "Fact check", q.answer),
                                   SearchHit("https://www.politifact.com/factchecks/2020/x/", "Ruling", q.answer)])
            elif q.snippet:
                cache.put(q.text, [SearchHit("https://www.snopes.com/fact-check/item/", "Rating", "Mostly false."),
                                   SearchHit(url("news"), "", ""),
                                   SearchHit(url("report"), "Report", q.snippet)])
        for s in c.subs:
            if s.snippet:
                cache.put(s.text, [SearchHit(url("background"), "Background", s.snippet)])
    return cache


# --------------------------------------------------------------------------
# the federal spending case study

SPENDING_CLAIM = ("Says 57 percent of federal spending goes to the military and just 1 percent "
                "goes to food and agriculture, including food stamps.")
SPENDING_Q1 = "What percentage of federal spending goes to the military?"
SPENDING_Q2 = "What percentage of federal spending goes to food and agriculture, including food stamps?"
SPENDING_A1 = ("About one-sixth of federal spending goes to national defense. CBO estimates the budgetary "
             "effects of legislation related to national security and assesses the cost-effectiveness of "
             "current and proposed defense programs. CBO also analyzes federal programs and issues related "
             "to veterans.")
SPENDING_SNIPPET = ("Federal spending on USDA's food and nutrition assistance programs totaled $182.5 billion, "
                  "49 percent more than the ... USDA's food and nutrition assistance programs accounted for "
                  "about 5 percent of total federal outlays.")


def spending_generation() -> str:
    closing = final_line(LIAR, "false").replace("is classified as", "can be classified as")
    return "\n".join([
        f"{P.DECOMPOSE_SENTINEL} 2 subclaims that are easier to verify:",
        "1. 57 percent of federal spending goes to the military.",
        "2. Just 1 percent of federal spending goes to food and agriculture, including food stamps.",
        P.subclaim_header(1),
        f"Question: {SPENDING_Q1} ",
        f"{P.CONFIDENCE_INSTRUCTION} Yes.",
        f"Answer: {SPENDING_A1}",
        P.subclaim_header(2),
        # the question is generated twice before the model pauses
        f"Question: {SPENDING_Q2} Question: {SPENDING_Q2} ",
        f"{P.CONFIDENCE_INSTRUCTION} No.",
        f"Answer: {SPENDING_SNIPPET}",
        f"{closing} {closing}",
    ])


def spending_fixture() -> dict:
    return {"conversations": {"*": [
        {"match": P.hiss_query(SPENDING_CLAIM).rstrip(), "continuation": spending_generation()},
    ]}}


def spending_cache() -> SearchCache:
    return SearchCache({SPENDING_Q2: [
        SearchHit("https://www.politifact.com/factchecks/2016/feb/23/facebook-posts/federal-spending/",
                  "Facebook posts", "Pie chart of federal spending"),
        SearchHit("https://www.ers.usda.gov/topics/food-nutrition-assistance/", "USDA ERS", SPENDING_SNIPPET),
    ]})


# --------------------------------------------------------------------------
# ten-claim ablation corpus (3-class scheme)


def rawfc10() -> list[ClaimScript]:
    C, S = ClaimScript, Sub
    return [
        C("c01", "The city council approved a 12 percent property tax increase and cut library hours.",
          "half", "half",
          [S("The city council approved a 12 percent property tax increase.",
             [Q("Did the city council approve a 12 percent property tax increase?", False, "Yes.",
                "Council minutes show a 7.5 percent levy increase was approved in June.")],
             "The council approved a 7.5 percent levy increase in June."),
           S("The city council cut library hours.",
             [Q("Did the city council reduce public library opening hours?", True, "Yes, hours were reduced.",
                "Branch libraries now close at 6 p.m. on weekdays after the budget vote.")],
             "Branch libraries now close two hours earlier on weekdays.")],
          whole=Q("Did the city council raise property taxes by 12 percent and cut library hours?", False, "No.",
                  "The approved budget raised the levy 7.5 percent and trimmed weekday library hours."),
          ),
        C("c02", "The state has the lowest unemployment rate in the country.",
          "false", "false",
          [S("The state has the lowest unemployment rate in the country.",
             [Q("What is the state's current unemployment rate?", False, "About 3 percent.",
                "The state's seasonally adjusted unemployment rate was 4.1 percent in March."),
              Q("Which state has the lowest unemployment rate in the country?", False, "South Dakota.",
                "South Dakota and North Dakota posted the lowest jobless rates at 2.0 percent.")],
             "Labor statistics rank the state 31st for unemployment in March.")]),
        C("c03", "The governor signed a bill banning plastic bags statewide.",
          "true", "true",
          [S("The governor signed a bill banning plastic bags statewide.",
             [Q("Did the governor sign a statewide plastic bag ban into law?", True,
                "Yes, the ban was signed in April and takes effect next year.",
                "The governor signed the single-use plastic bag ban on April 22.")],
             "The statewide single-use bag ban was signed on April 22.")]),
        C("c04", "Crime in the city has doubled since the new police chief took office.",
          "false", "false",
          [S("Crime in the city has increased since the new police chief took office.",
             [Q("How has the city's crime rate changed in recent years?", False, "It went up.",
                "Reported violent crime fell 4 percent while property crime rose 9 percent.")],
             "Total reported crime rose 6 percent over two years."),
           S("Crime in the city has doubled.",
             [Q("Has total reported crime in the city doubled?", True, "No, it has not doubled.",
                "City crime statistics show a 6 percent overall increase."),
              Q("Did the crime rate double over any recent period?", False, "No.",
                only_fact_checks=True)],
             "No period in the last decade shows crime doubling in the city.")],
          whole=Q("Has crime in the city doubled since the new police chief took office?", False, "No.",
                  "Crime statistics show a 6 percent rise since the chief was sworn in.")),
        C("c05", "The school district spends more per student than any district in the state.",
          "half", "false",
          [S("The school district spends more per student than any district in the state.",
             [Q("How much does the school district spend per student?", False, "About $20,000.",
                "The district spent $14,820 per pupil in the last fiscal year."),
              Q("Which district in the state has the highest per-student spending?", True,
                "A small rural district has the highest per-student spending.",
                "A rural district with 300 students spends $26,000 per pupil.")],
             "State education data rank the district fourth in per-pupil spending.")]),
        C("c06", "The senator voted against the infrastructure bill and the farm bill.",
          "true", "true",
          [S("The senator voted against the infrastructure bill.",
             [Q("How did the senator vote on the infrastructure bill?", True, "The senator voted no.",
                "Roll call 314 records the senator voting nay on the infrastructure bill.")],
             "The senator voted nay on roll call 314."),
           S("The senator voted against the farm bill.",
             [Q("How did the senator vote on the farm bill?", False, "Against it.",
                "The senator was one of 12 members voting against the farm bill.")],
             "The senator opposed the farm bill on final passage.")],
          whole=Q("Did the senator vote against both the infrastructure bill and the farm bill?", True,
                  "Yes, the senator voted against both.",
                  "Voting records list the senator as a nay on both bills.")),
        C("c07", "Half of all new jobs last year went to immigrants.",
          "half", "half",
          [S("Half of all new jobs last year went to immigrants.",
             [Q("What share of new jobs last year went to foreign-born workers?", False, "Half.",
                "Foreign-born workers accounted for about 38 percent of net job gains last year.")],
             "Immigrant workers took roughly 38 percent of net new jobs.")]),
        C("c08", "The new stadium was built without any taxpayer money and created 5,000 jobs.",
          "false", "half",
          [S("The new stadium was built without any taxpayer money.",
             [Q("Was public money used to finance the new stadium?", False, "No.",
                "The county contributed $150 million in bonds toward stadium construction.")],
             "County bonds covered $150 million of construction costs."),
           S("The new stadium created 5,000 jobs.",
             [Q("How many jobs did the stadium project create?", True, "About 5,000 jobs.",
                "The developer estimated 4,800 construction jobs and 900 permanent positions.")],
             "The developer reported 4,800 temporary construction jobs.")],
          whole=Q("Was the new stadium financed entirely with private money?", False, "Yes.",
                  "Public financing for the stadium included $150 million in county bonds.")),
        C("c09", "The mayor has never raised water rates.",
          "false", "false",
          [S("The mayor has never raised water rates.",
             [Q("Have water rates increased during the mayor's term?", False, "No.",
                "Water rates rose 3 percent in 2019 and 5 percent in 2021 under the mayor.")],
             "The utility raised water rates twice during the mayor's tenure.")]),
        C("c10", "The bridge replacement project finished on time and under budget.",
          "true", "true",
          [S("The bridge replacement project finished on time.",
             [Q("When was the bridge replacement project completed?", True,
                "It was completed in October as scheduled.",
                "The replacement bridge opened to traffic in October, matching the original schedule.")],
             "The bridge opened to traffic on its scheduled October date."),
           S("The bridge replacement project finished under budget.",
             [Q("What was the final cost of the bridge replacement compared to its budget?", False,
                "It cost less.",
                "Final costs came in at $212 million against a $230 million budget.")],
             "The bridge project closed $18 million under budget.")],
          whole=Q("Was the bridge replacement completed on schedule and within budget?", True,
                  "Yes, it opened in October and cost less than planned.",
                  "The bridge opened in October and finished $18 million under its budget.")),
    ]


def rawfc10_fixture(claims: list[ClaimScript]) -> dict:
    return {"conversations": {c.id: conversation(c, RAWFC) for c in claims}}


def rawfc10_claims_jsonl(claims: list[ClaimScript]) -> str:
    return "".join(json.dumps({"id": c.id, "text": c.text, "gold": c.gold, "metadata": {}}) + "\n"
                   for c in claims)


def build() -> dict[str, str]:
    """File name -> contents for every shipped fixture."""
    claims = rawfc10()
    dump = lambda d: json.dumps(d, ensure_ascii=False, indent=2) + "\n"  # noqa: E731
    return {
        "spending.json": dump(spending_fixture()),
        "spending_cache.json": cache_to_json(spending_cache()),
        "rawfc10.json": dump(rawfc10_fixture(claims)),
        "rawfc10_cache.json": cache_to_json(cache_entries(claims)),
        "rawfc10_claims.jsonl": rawfc10_claims_jsonl(claims),
    }


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else FIXTURE_DIR
    for name, text in build().items():
        (out / name).write_text(text, encoding="utf-8")
        print(f"wrote {out / name}")
