from __future__ import annotations

import itertools
import json
import math
import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from declsearch.providers import CallLog, ProviderError, ScriptedTextProvider
from declsearch.reasoning import (
    FeedbackItem,
    JudgeVerdict,
    ReasoningConfig,
    ReasoningEnv,
    ReasoningError,
    ReasoningProviders,
    ReasoningResult,
    Sketch,
    SketchParseError,
    SketchStep,
    STATUS_EARLY_STOP,
    STATUS_FAIL,
    STATUS_GOOD,
    Target,
    TraceLog,
    aggregate,
    filter_candidates,
    generate_sketch,
    judge_sketch,
    revise_sketch,
    run_branch,
    run_reasoning,
)
from declsearch.retrieval import Hit, RankedList
from tests.conftest import make_record

TARGET = Target(informal="informal statement", formal="formal statement")

ACCEPT = '{"accepted": true}'
REJECT = '{"accepted": false, "feedback": [{"step_index": 0, "reason": "weak support"}]}'


def sketch_json(queries: list[str]) -> str:
    return json.dumps(
        {"steps": [{"description": f"step {i}", "query": q} for i, q in enumerate(queries)]}
    )


def reranked(query: str, names: list[str]) -> RankedList:
    return RankedList(
        query=query,
        hits=tuple(Hit(decl_name=n, score=1.0 - i * 0.1, rank=i) for i, n in enumerate(names)),
        stage="reranked",
    )


RECORDS = {
    name: make_record(name, informal=f"About {name}")
    for name in ["GoodA", "BadB", "GoodC", "X", "Y", "Z", "D0", "D1"]
}


class TestAggregate:
    def test_single_list_discounts(self):
        ranking = aggregate([reranked("q", ["X", "Y", "Z"])])
        scores = {e.decl_name: e.score for e in ranking.entries}
        assert scores["X"] == pytest.approx(1.0, abs=1e-12)
        assert scores["Y"] == pytest.approx(1.0 / math.log2(3), abs=1e-12)
        assert scores["Z"] == pytest.approx(0.5, abs=1e-12)
        assert [round(e.score, 2) for e in ranking.entries] == [1.0, 0.63, 0.5]

    def test_cross_list_sum(self):
        lists = [reranked("a", ["D", "E"]), reranked("b", ["F", "G", "D"])]
        ranking = aggregate(lists)
        scores = {e.decl_name: e.score for e in ranking.entries}
        # hand-evaluated: rank 0 in one list, rank 2 in another
        assert scores["D"] == pytest.approx(1.0 / math.log2(2) + 1.0 / math.log2(4), abs=1e-12)
        assert scores["D"] == pytest.approx(1.5, abs=1e-12)

    def test_empty_input(self):
        assert aggregate([]).entries == ()

    def test_sources_record_positions(self):
        ranking = aggregate([reranked("a", ["D"]), reranked("b", ["E", "D"])])
        assert ranking.sources["D"] == ((0, 0), (1, 1))

    def test_permutation_invariance(self):
        lists = [reranked("a", ["X", "Y"]), reranked("b", ["Z"]), reranked("c", ["Y", "Z"])]
        base = aggregate(lists)
        for perm in itertools.permutations(lists):
            assert {e.decl_name: e.score for e in aggregate(list(perm)).entries} == {
                e.decl_name: e.score for e in base.entries
            }

    def test_adding_a_list_never_decreases_scores(self):
        lists = [reranked("a", ["X", "Y"])]
        before = {e.decl_name: e.score for e in aggregate(lists).entries}
        after = {
            e.decl_name: e.score
            for e in aggregate(lists + [reranked("b", ["Y", "W"])]).entries
        }
        for name, score in before.items():
            assert after[name] >= score - 1e-15

    @given(st.integers(min_value=0, max_value=6), st.integers(min_value=0, max_value=6))
    @settings(max_examples=20)
    def test_single_appearance_score_decreases_in_rank(self, r1, r2):
        names = [f"N{i}" for i in range(8)]
        lst = reranked("q", names)
        scores = {e.decl_name: e.score for e in aggregate([lst]).entries}
        if r1 < r2:
            assert scores[f"N{r1}"] > scores[f"N{r2}"]


class TestGenerateSketch:
    def test_three_step_document(self):
        provider = ScriptedTextProvider(default=lambda p: sketch_json(["a", "b", "c"]))
        sketch = generate_sketch(TARGET, provider)
        assert len(sketch.steps) == 3 and sketch.revision == 0

    def test_zero_steps_is_parse_error(self):
        provider = ScriptedTextProvider(default=lambda p: '{"steps": []}')
        with pytest.raises(SketchParseError):
            generate_sketch(TARGET, provider, parse_retries=0)

    def test_missing_query_names_step_index(self):
        doc = '{"steps": [{"description": "d", "query": "ok"}, {"description": "d"}]}'
        provider = ScriptedTextProvider(default=lambda p: doc)
        with pytest.raises(SketchParseError, match="step 1"):
            generate_sketch(TARGET, provider, parse_retries=0)

    def test_parse_error_carries_raw_text(self):
        provider = ScriptedTextProvider(default=lambda p: "not json at all")
        with pytest.raises(SketchParseError) as excinfo:
            generate_sketch(TARGET, provider, parse_retries=0)
        assert excinfo.value.raw == "not json at all"

    def test_retries_then_succeeds(self):
        provider = ScriptedTextProvider(sequence=["garbage", sketch_json(["a"])])
        sketch = generate_sketch(TARGET, provider, parse_retries=1)
        assert len(sketch.steps) == 1

    def test_prompt_forbids_naming_lemmas(self):
        provider = ScriptedTextProvider(default=lambda p: sketch_json(["a"]))
        generate_sketch(TARGET, provider)
        assert "do not name specific library lemmas" in provider.calls[0]

    def test_fenced_output_accepted(self):
        provider = ScriptedTextProvider(default=lambda p: f"```json\n{sketch_json(['a'])}\n```")
        assert len(generate_sketch(TARGET, provider).steps) == 1


class TestFilterCandidates:
    STEP = SketchStep(description="d", query="the query")

    def _provider(self, decide):
        def respond(prompt: str) -> str:
            name = next(l for l in prompt.splitlines() if l.startswith("name: "))[6:]
            return json.dumps({"relevant": decide(name)})

        return ScriptedTextProvider(default=respond)

    def test_keeps_matching_prefix_and_renumbers(self):
        hits = reranked("q", ["GoodA", "BadB", "GoodC"])
        out = filter_candidates(self.STEP, hits, self._provider(lambda n: n.startswith("Good")), RECORDS)
        assert out.names() == ["GoodA", "GoodC"]
        assert [h.rank for h in out.hits] == [0, 1]
        assert out.stage == "filtered"

    def test_empty_result_is_valid(self):
        hits = reranked("q", ["GoodA", "BadB"])
        out = filter_candidates(self.STEP, hits, self._provider(lambda n: False), RECORDS)
        assert out.hits == ()

    def test_accept_all_is_identity_with_stage_change(self):
        hits = reranked("q", ["X", "Y", "Z"])
        out = filter_candidates(self.STEP, hits, self._provider(lambda n: True), RECORDS)
        assert out.names() == ["X", "Y", "Z"]
        assert [h.score for h in out.hits] == [h.score for h in hits.hits]

    def test_candidate_metadata_in_prompt(self):
        provider = self._provider(lambda n: True)
        filter_candidates(self.STEP, reranked("q", ["GoodA"]), provider, RECORDS)
        prompt = provider.calls[0]
        assert "kind: theorem" in prompt
        assert "sig_of GoodA" in prompt
        assert "About GoodA" in prompt

    def test_provider_failure_drops_candidate_and_logs(self):
        def respond(prompt: str) -> str:
            if "name: Y" in prompt:
                raise ProviderError("flaky")
            return '{"relevant": true}'

        log = CallLog()
        out = filter_candidates(
            self.STEP,
            reranked("q", ["X", "Y", "Z"]),
            ScriptedTextProvider(default=respond),
            RECORDS,
            parse_retries=1,
            log=log,
        )
        assert out.names() == ["X", "Z"]
        dropped = log.entries("filter")
        assert len(dropped) == 1 and dropped[0].key.startswith("Y")

    def test_preserves_relative_order(self):
        hits = reranked("q", ["Z", "X", "Y"])
        out = filter_candidates(self.STEP, hits, self._provider(lambda n: n != "X"), RECORDS)
        assert out.names() == ["Z", "Y"]


class TestJudgeSketch:
    SKETCH = Sketch(steps=(SketchStep(description="d0", query="q0"), SketchStep(description="d1", query="q1")))

    def test_accept(self):
        verdict = judge_sketch(
            TARGET,
            self.SKETCH,
            [reranked("q0", ["X"]), reranked("q1", ["Y"])],
            ScriptedTextProvider(default=lambda p: ACCEPT),
        )
        assert verdict == JudgeVerdict(accepted=True)

    def test_reject_with_feedback(self):
        response = '{"accepted": false, "feedback": [{"step_index": 2, "reason": "missing premise"}]}'
        verdict = judge_sketch(
            TARGET,
            self.SKETCH,
            [reranked("q0", ["X"]), reranked("q1", ["Y"])],
            ScriptedTextProvider(default=lambda p: response),
        )
        assert verdict.accepted is False
        assert verdict.feedback == (FeedbackItem(step_index=2, reason="missing premise"),)

    def test_reject_without_feedback_repaired_from_empty_steps(self):
        response = '{"accepted": false, "feedback": []}'
        verdict = judge_sketch(
            TARGET,
            self.SKETCH,
            [reranked("q0", []), reranked("q1", ["Y"])],
            ScriptedTextProvider(default=lambda p: response),
        )
        assert [f.step_index for f in verdict.feedback] == [0]

    def test_unparseable_counts_as_rejection(self):
        verdict = judge_sketch(
            TARGET,
            self.SKETCH,
            [reranked("q0", ["X"]), reranked("q1", ["Y"])],
            ScriptedTextProvider(default=lambda p: "mumble"),
            parse_retries=1,
        )
        assert verdict.accepted is False
        assert verdict.feedback[0].reason == "judge unparseable"

    def test_prompt_marks_empty_steps(self):
        provider = ScriptedTextProvider(default=lambda p: ACCEPT)
        judge_sketch(TARGET, self.SKETCH, [reranked("q0", []), reranked("q1", ["Y"])], provider)
        prompt = provider.calls[0]
        assert "[no usable results]" in prompt
        assert "[0] Y" in prompt

    def test_accepting_verdict_drops_feedback(self):
        response = '{"accepted": true, "feedback": [{"step_index": 0, "reason": "x"}]}'
        verdict = judge_sketch(
            TARGET,
            self.SKETCH,
            [reranked("q0", ["X"]), reranked("q1", ["Y"])],
            ScriptedTextProvider(default=lambda p: response),
        )
        assert verdict == JudgeVerdict(accepted=True)

    def test_filtered_length_mismatch_rejected(self):
        with pytest.raises(ReasoningError):
            judge_sketch(TARGET, self.SKETCH, [reranked("q0", [])], ScriptedTextProvider(default=lambda p: ACCEPT))


class TestReviseSketch:
    VERDICT = JudgeVerdict(accepted=False, feedback=(FeedbackItem(0, "weak"),))

    def test_revision_increments(self):
        prior = Sketch(steps=(SketchStep("d", "q"),), revision=0)
        revised = revise_sketch(TARGET, prior, self.VERDICT, ScriptedTextProvider(default=lambda p: sketch_json(["q2"])))
        assert revised.revision == 1

    def test_cap_violation(self):
        prior = Sketch(steps=(SketchStep("d", "q"),), revision=3)
        with pytest.raises(ReasoningError, match="cap"):
            revise_sketch(TARGET, prior, self.VERDICT, ScriptedTextProvider(default=lambda p: sketch_json(["q"])))

    def test_identical_content_is_valid(self):
        prior = Sketch(steps=(SketchStep("step 0", "q"),), revision=1)
        revised = revise_sketch(TARGET, prior, self.VERDICT, ScriptedTextProvider(default=lambda p: sketch_json(["q"])))
        assert revised.steps[0].query == "q" and revised.revision == 2

    def test_requires_rejecting_verdict(self):
        prior = Sketch(steps=(SketchStep("d", "q"),), revision=0)
        with pytest.raises(ReasoningError):
            revise_sketch(TARGET, prior, JudgeVerdict(accepted=True), ScriptedTextProvider(default=lambda p: "x"))

    def test_prompt_carries_prior_and_feedback(self):
        prior = Sketch(steps=(SketchStep("d", "original query"),), revision=0)
        provider = ScriptedTextProvider(default=lambda p: sketch_json(["q2"]))
        revise_sketch(TARGET, prior, self.VERDICT, provider)
        assert "original query" in provider.calls[0]
        assert "weak" in provider.calls[0]


# ---------------------------------------------------------------------------
# Branch orchestration


def search_fn(query: str, k: int) -> RankedList:
    table = {
        "q": ["X", "Y"],
        "q0": ["D0", "X"],
        "q1": ["D1", "Y"],
    }
    return reranked(query, table.get(query, ["Z"]))


ACCEPT_ALL_FILTER = lambda p: '{"relevant": true}'


def providers_with(judge_responses: list[str], queries=("q",)) -> ReasoningProviders:
    return ReasoningProviders(
        sketcher=ScriptedTextProvider(default=lambda p: sketch_json(list(queries))),
        filterer=ScriptedTextProvider(default=ACCEPT_ALL_FILTER),
        judge=ScriptedTextProvider(sequence=list(judge_responses)),
        reviser=ScriptedTextProvider(default=lambda p: sketch_json(list(queries))),
    )


def env_with(providers) -> ReasoningEnv:
    return ReasoningEnv(search=search_fn, records=RECORDS, providers=providers)


class TestRunBranch:
    def test_accept_on_first_judge(self):
        result = run_branch(TARGET, env_with(providers_with([ACCEPT])))
        assert result.status == STATUS_GOOD
        assert result.final_sketch.revision == 0
        assert len(result.judge_trace) == 1

    def test_reject_four_times_fails_at_cap(self):
        result = run_branch(TARGET, env_with(providers_with([REJECT] * 4)))
        assert result.status == STATUS_FAIL
        assert result.final_sketch.revision == 3
        assert len(result.judge_trace) == 4
        assert all(not v.accepted for v in result.judge_trace)

    def test_judge_calls_equal_revisions_plus_one(self):
        for rejects in range(4):
            responses = [REJECT] * rejects + [ACCEPT]
            result = run_branch(TARGET, env_with(providers_with(responses)))
            assert result.status == STATUS_GOOD
            assert len(result.judge_trace) == result.final_sketch.revision + 1

    def test_cancel_after_first_retrieval_early_stops(self):
        cancel = threading.Event()

        def cancelling_search(query: str, k: int) -> RankedList:
            result = search_fn(query, k)
            cancel.set()
            return result

        env = ReasoningEnv(
            search=cancelling_search, records=RECORDS, providers=providers_with([ACCEPT])
        )
        result = run_branch(TARGET, env, cancel=cancel)
        assert result.status == STATUS_EARLY_STOP
        assert result.judge_trace == ()

    def test_provider_transport_error_fails_branch(self):
        providers = providers_with([ACCEPT])
        providers.sketcher = ScriptedTextProvider(default=lambda p: ProviderError("down"))
        result = run_branch(TARGET, env_with(providers))
        assert result.status == STATUS_FAIL
        assert result.error is not None

    def test_filtered_lists_follow_latest_sketch(self):
        # first sketch queries q0; revision queries q1
        providers = ReasoningProviders(
            sketcher=ScriptedTextProvider(default=lambda p: sketch_json(["q0"])),
            filterer=ScriptedTextProvider(default=ACCEPT_ALL_FILTER),
            judge=ScriptedTextProvider(sequence=[REJECT, ACCEPT]),
            reviser=ScriptedTextProvider(default=lambda p: sketch_json(["q1"])),
        )
        result = run_branch(TARGET, env_with(providers))
        assert result.status == STATUS_GOOD
        assert result.filtered[0].names() == ["D1", "Y"]

    def test_trace_records_loop_events(self):
        trace = TraceLog()
        run_branch(TARGET, env_with(providers_with([REJECT, ACCEPT])), trace=trace)
        events = [r["event"] for r in trace.merged()]
        assert events == [
            "sketch", "retrieve", "filter", "judge", "revise",
            "retrieve", "filter", "judge", "done",
        ]


# ---------------------------------------------------------------------------
# Scenario machinery for joint branch outcomes


class SyncedProvider:
    """Sequence-scripted provider that can block or signal at specific calls."""

    def __init__(self, responses, wait_at=None, signal_at=None):
        self.responses = list(responses)
        self.wait_at = wait_at or {}
        self.signal_at = signal_at or {}
        self.count = 0

    def generate(self, prompt: str, **params) -> str:
        index = self.count
        self.count += 1
        signal = self.signal_at.get(index)
        if signal is not None:
            signal.set()
        condition = self.wait_at.get(index)
        if condition is not None:
            deadline = time.monotonic() + 10.0
            while not condition():
                if time.monotonic() > deadline:
                    raise AssertionError("scenario deadlock: wait condition never satisfied")
                time.sleep(0.001)
        response = self.responses[index] if index < len(self.responses) else self.responses[-1]
        if callable(response):
            response = response(prompt)
        return response


def branch_done(trace: TraceLog, branch_id: int):
    def check() -> bool:
        return any(
            r["branch"] == branch_id and r["event"] == "done" for r in trace.merged()
        )

    return check


def event_set(event: threading.Event):
    return event.is_set


def scenario(name: str):
    """Build (env, trace) realizing one joint branch-outcome class deterministically."""
    trace = TraceLog()
    queries = {0: ["q0"], 1: ["q1"]}

    def base(branch_id: int, judge, filterer=None) -> ReasoningProviders:
        return ReasoningProviders(
            sketcher=SyncedProvider([sketch_json(queries[branch_id])]),
            filterer=filterer or SyncedProvider(['{"relevant": true}']),
            judge=judge,
            reviser=SyncedProvider([sketch_json(queries[branch_id])]),
        )

    if name == "good_good":
        b1_entered_judge = threading.Event()

        def factory(branch_id: int) -> ReasoningProviders:
            if branch_id == 0:
                return base(0, SyncedProvider([ACCEPT], wait_at={0: event_set(b1_entered_judge)}))
            return base(
                1,
                SyncedProvider(
                    [ACCEPT],
                    signal_at={0: b1_entered_judge},
                    wait_at={0: branch_done(trace, 0)},
                ),
            )

    elif name == "good_early_stop":
        def factory(branch_id: int) -> ReasoningProviders:
            if branch_id == 0:
                return base(0, SyncedProvider([ACCEPT]))
            blocked_filter = SyncedProvider(
                ['{"relevant": true}'], wait_at={0: branch_done(trace, 0)}
            )
            return base(1, SyncedProvider([ACCEPT]), filterer=blocked_filter)

    elif name == "early_stop_good":
        def factory(branch_id: int) -> ReasoningProviders:
            if branch_id == 1:
                return base(1, SyncedProvider([ACCEPT]))
            blocked_filter = SyncedProvider(
                ['{"relevant": true}'], wait_at={0: branch_done(trace, 1)}
            )
            return base(0, SyncedProvider([ACCEPT]), filterer=blocked_filter)

    elif name == "good_fail":
        entering_last_judge = threading.Event()

        def factory(branch_id: int) -> ReasoningProviders:
            if branch_id == 0:
                return base(0, SyncedProvider([ACCEPT], wait_at={0: event_set(entering_last_judge)}))
            return base(
                1,
                SyncedProvider(
                    [REJECT] * 4,
                    signal_at={3: entering_last_judge},
                    wait_at={3: branch_done(trace, 0)},
                ),
            )

    elif name == "fail_good":
        entering_last_judge = threading.Event()

        def factory(branch_id: int) -> ReasoningProviders:
            if branch_id == 1:
                return base(1, SyncedProvider([ACCEPT], wait_at={0: event_set(entering_last_judge)}))
            return base(
                0,
                SyncedProvider(
                    [REJECT] * 4,
                    signal_at={3: entering_last_judge},
                    wait_at={3: branch_done(trace, 1)},
                ),
            )

    elif name == "fail_fail":
        def factory(branch_id: int) -> ReasoningProviders:
            return base(branch_id, SyncedProvider([REJECT] * 4))

    else:
        raise ValueError(name)

    env = ReasoningEnv(search=search_fn, records=RECORDS, providers=factory)
    return env, trace


SCENARIO_EXPECTATIONS = {
    "good_good": (STATUS_GOOD, STATUS_GOOD),
    "good_early_stop": (STATUS_GOOD, STATUS_EARLY_STOP),
    "early_stop_good": (STATUS_EARLY_STOP, STATUS_GOOD),
    "good_fail": (STATUS_GOOD, STATUS_FAIL),
    "fail_good": (STATUS_FAIL, STATUS_GOOD),
    "fail_fail": (STATUS_FAIL, STATUS_FAIL),
}


def run_scenario(name: str) -> ReasoningResult:
    env, trace = scenario(name)
    return run_reasoning(TARGET, env, ReasoningConfig(budget=2), trace=trace)


class TestRunReasoning:
    @pytest.mark.parametrize("name", sorted(SCENARIO_EXPECTATIONS))
    def test_joint_outcome_classes(self, name):
        result = run_scenario(name)
        statuses = tuple(branch.status for branch in result.branches)
        assert statuses == SCENARIO_EXPECTATIONS[name]
        for branch in result.branches:
            if branch.final_sketch is not None:
                assert branch.final_sketch.revision <= 3
            if branch.status in (STATUS_GOOD, STATUS_FAIL):
                assert len(branch.judge_trace) == branch.final_sketch.revision + 1

    def test_first_good_branch_wins_aggregation(self):
        result = run_scenario("good_early_stop")
        assert result.winner == 0
        assert result.ranking.names() == ["D0", "X"]

    def test_early_stop_good_takes_branch_one(self):
        result = run_scenario("early_stop_good")
        assert result.winner == 1
        assert result.ranking.names() == ["D1", "Y"]

    def test_fail_fail_pools_both_branches(self):
        result = run_scenario("fail_fail")
        assert result.status == STATUS_FAIL
        assert set(result.ranking.names()) == {"D0", "D1", "X", "Y"}
        scores = {e.decl_name: e.score for e in result.ranking.entries}
        # X at rank 1 of branch 0's single list; D0 at rank 0
        assert scores["D0"] == pytest.approx(1.0, abs=1e-12)
        assert scores["X"] == pytest.approx(1.0 / math.log2(3), abs=1e-12)

    def test_deterministic_across_repeats(self):
        for name in sorted(SCENARIO_EXPECTATIONS):
            outcomes = set()
            for _ in range(3):
                result = run_scenario(name)
                outcomes.add(
                    (
                        tuple(b.status for b in result.branches),
                        tuple(result.ranking.names()),
                        result.winner,
                    )
                )
            assert len(outcomes) == 1, f"{name} was not deterministic: {outcomes}"

    def test_reflection_disabled_skips_judge_and_pools_initial_sketches(self):
        log = CallLog()

        def factory(branch_id: int) -> ReasoningProviders:
            return ReasoningProviders(
                sketcher=ScriptedTextProvider(default=lambda p, b=branch_id: sketch_json([f"q{b}"])),
                filterer=ScriptedTextProvider(default=ACCEPT_ALL_FILTER),
                judge=ScriptedTextProvider(default=lambda p: ACCEPT, role="judge", log=log),
                reviser=ScriptedTextProvider(default=lambda p: sketch_json(["q"]), role="reviser", log=log),
            )

        env = ReasoningEnv(search=search_fn, records=RECORDS, providers=factory, log=log)
        result = run_reasoning(
            TARGET, env, ReasoningConfig(budget=2, reflection_enabled=False)
        )
        assert log.count("judge") == 0
        assert log.count("reviser") == 0
        assert all(branch.judge_trace == () for branch in result.branches)
        assert set(result.ranking.names()) == {"D0", "D1", "X", "Y"}

    def test_budget_one_equals_single_branch_plus_aggregation(self):
        providers = providers_with([ACCEPT], queries=("q0",))
        result = run_reasoning(TARGET, env_with(providers), ReasoningConfig(budget=1))
        direct = run_branch(TARGET, env_with(providers_with([ACCEPT], queries=("q0",))))
        assert result.branches[0].status == direct.status == STATUS_GOOD
        assert result.ranking.names() == aggregate(list(direct.filtered)).names()

    def test_all_branches_erroring_raises(self):
        def factory(branch_id: int) -> ReasoningProviders:
            return ReasoningProviders(
                sketcher=ScriptedTextProvider(default=lambda p: ProviderError("down")),
                filterer=ScriptedTextProvider(default=ACCEPT_ALL_FILTER),
                judge=ScriptedTextProvider(default=lambda p: ACCEPT),
                reviser=ScriptedTextProvider(default=lambda p: sketch_json(["q"])),
            )

        env = ReasoningEnv(search=search_fn, records=RECORDS, providers=factory)
        with pytest.raises(ReasoningError, match="all branches errored"):
            run_reasoning(TARGET, env, ReasoningConfig(budget=2))

    def test_budget_must_be_positive(self):
        with pytest.raises(ReasoningError):
            run_reasoning(TARGET, env_with(providers_with([ACCEPT])), ReasoningConfig(budget=0))


class TestTraceLog:
    def test_merged_is_branch_major(self):
        trace = TraceLog()
        trace.emit(1, "sketch", {"revision": 0})
        trace.emit(0, "sketch", {"revision": 0})
        trace.emit(0, "done", {"status": "good"})
        assert [(r["branch"], r["event"]) for r in trace.merged()] == [
            (0, "sketch"), (0, "done"), (1, "sketch"),
        ]

    def test_lines_round_trip(self, tmp_path):
        trace = TraceLog()
        trace.emit(0, "sketch", {"revision": 0})
        path = tmp_path / "trace.jsonl"
        trace.write(path)
        docs = [json.loads(line) for line in path.read_text().splitlines()]
        assert docs == trace.merged()

    def test_unknown_event_rejected(self):
        with pytest.raises(ReasoningError):
            TraceLog().emit(0, "bogus", {})


class TestInvariants:
    def test_sketch_requires_steps(self):
        with pytest.raises(ReasoningError):
            Sketch(steps=())

    def test_verdict_invariants(self):
        with pytest.raises(ReasoningError):
            JudgeVerdict(accepted=True, feedback=(FeedbackItem(0, "x"),))
        with pytest.raises(ReasoningError):
            JudgeVerdict(accepted=False, feedback=())
