from __future__ import annotations

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitac.catalogs import foodreplica_catalog, reference_catalog
from vitac.errors import AuthMissing, MalformedResponse, RateLimited, TemplateSlotMissing, TransportError, UnknownLabel
from vitac.vlm.backends import (
    ClassificationRequest,
    HttpBackend,
    LabelKnowledge,
    MockKnowledge,
    VlmBackendConfig,
    chat_payload,
    classify_many,
    encode_image,
    extract_text,
    mock_classify,
    mock_scores,
)
from vitac.vlm.parse import AMBIGUOUS, NO_MATCH, OK, normalize, parse_label
from vitac.vlm.prompts import (
    DEFAULT_VISION_ONLY,
    DEFAULT_VISUO_TACTILE,
    TACTILE_WORDS,
    PromptTemplate,
    build_prompt,
)

PNG = base64.b64decode(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNk+M9QDwADhgGAWjR9awAAAABJRU5ErkJggg=="
)


# ------------------------------------------------------------------ prompts


def test_prompt_with_description():
    req = ClassificationRequest(("a", "b"), appearance_tag="t", tactile_description="otedama, sponge",
                                reference_labels=("otedama", "sponge"))
    text = build_prompt(req)
    assert "otedama, sponge" in text
    assert "a, b" in text
    assert "${" not in text


def test_vision_only_prompt_has_no_tactile_words():
    req = ClassificationRequest(("strawberry", "resin_replica_strawberry"), appearance_tag="strawberry")
    text = build_prompt(req).lower()
    for word in TACTILE_WORDS:
        assert word not in text
    assert "strawberry, resin_replica_strawberry" in text


def test_candidate_order_preserved():
    labels = ("zeta", "alpha", "mid", "beta")
    text = build_prompt(ClassificationRequest(labels, appearance_tag="x", tactile_description="d"))
    positions = [text.index(l) for l in labels]
    assert positions == sorted(positions)


@given(st.text(alphabet=st.characters(blacklist_characters="$", blacklist_categories=("Cs",)), min_size=1, max_size=40))
@settings(max_examples=50, deadline=None)
def test_prompt_never_leaves_slots(desc):
    text = build_prompt(ClassificationRequest(("a", "b"), appearance_tag="x", tactile_description=desc))
    assert "${" not in text


def test_template_validation(tmp_path):
    with pytest.raises(TemplateSlotMissing):
        PromptTemplate("no slots here")
    with pytest.raises(TemplateSlotMissing):
        PromptTemplate("${topk_refs} ${test_time_classes} ${extra}")
    with pytest.raises(TemplateSlotMissing):
        PromptTemplate("${topk_refs} ${topk_refs} ${test_time_classes}")
    with pytest.raises(TemplateSlotMissing):
        DEFAULT_VISUO_TACTILE.fill(topk_refs="x")
    (tmp_path / "t.txt").write_text("Pick one of ${test_time_classes}.")
    t = PromptTemplate.from_file(tmp_path / "t.txt", ["test_time_classes"])
    assert t.fill(test_time_classes="a, b") == "Pick one of a, b."
    assert DEFAULT_VISION_ONLY.slots == ("test_time_classes",)


def test_request_validation():
    with pytest.raises(ValueError):
        ClassificationRequest((), appearance_tag="x")
    with pytest.raises(ValueError):
        ClassificationRequest(("a", "a"), appearance_tag="x")
    with pytest.raises(ValueError):
        ClassificationRequest(("a",))


# ------------------------------------------------------------------ parsing

FOOD = [o.label for o in foodreplica_catalog()]


def test_parse_containment():
    r = parse_label("The answer is: resin_replica_strawberry.", ["strawberry", "resin_replica_strawberry"])
    assert r.label == "resin_replica_strawberry" and r.status == OK


def test_parse_two_names_is_ambiguous():
    r = parse_label("Either banana or tomato.", ["banana", "tomato", "bread"])
    assert r.label is None and r.status == AMBIGUOUS


def test_parse_exact():
    assert parse_label("strawberry", FOOD) == parse_label("  Strawberry. ", FOOD)
    assert parse_label("strawberry", FOOD).label == "strawberry"


def test_parse_no_match():
    r = parse_label("I cannot tell.", FOOD)
    assert r.status == NO_MATCH and r.label is None
    assert parse_label("", FOOD).status == NO_MATCH


def test_parse_whole_words_only():
    assert parse_label("pineapple", ["apple", "pear"]).status == NO_MATCH


def test_parse_spacing_variants():
    assert parse_label("Resin replica strawberry", FOOD).label == "resin_replica_strawberry"
    assert parse_label("cream-puff", FOOD).label == "cream_puff"
    assert normalize("  Raw_Kiri-mochi ") == "raw kiri mochi"


@pytest.mark.parametrize("cands", [FOOD, ["raw_kabocha_squash", "boiled_kabocha_squash", "raw_kiri_mochi", "boiled_kiri_mochi"]])
def test_parse_round_trip(cands):
    for c in cands:
        assert parse_label(c, cands).label == c


@given(st.lists(st.from_regex(r"[a-z]{1,6}(_[a-z]{1,6}){0,2}", fullmatch=True), min_size=1, max_size=8, unique=True))
@settings(max_examples=60, deadline=None)
def test_parse_round_trip_property(cands):
    for c in cands:
        assert parse_label(c, cands).label == c


# ------------------------------------------------------------------ mock


def pair_knowledge(**kw):
    labels = {
        "real_x": LabelKnowledge("x", "hard"),
        "replica_x": LabelKnowledge("x", "soft"),
        "soft_a": LabelKnowledge("a", "soft"),
        "soft_b": LabelKnowledge("b", "soft"),
        "soft_c": LabelKnowledge("c", "soft"),
        "hard_y": LabelKnowledge("y", "hard"),
        "medium_z": LabelKnowledge("z", "medium"),
    }
    return MockKnowledge(labels, **kw)


def test_mock_soft_evidence_picks_soft_twin():
    req = ClassificationRequest(("real_x", "replica_x"), appearance_tag="x",
                                tactile_description="a, b, c", reference_labels=("soft_a", "soft_b", "soft_c"))
    assert mock_scores(req, pair_knowledge()) == [1.0, 2.0]
    assert mock_classify(req, pair_knowledge()).chosen_label == "replica_x"


def test_mock_vision_only_takes_first_listed():
    k = pair_knowledge()
    assert mock_classify(ClassificationRequest(("real_x", "replica_x"), appearance_tag="x"), k).chosen_label == "real_x"
    assert mock_classify(ClassificationRequest(("replica_x", "real_x"), appearance_tag="x"), k).chosen_label == "replica_x"


def test_mock_without_visual_match_uses_tactile_score():
    k = pair_knowledge()
    cands = ("hard_y", "medium_z", "replica_x")
    refs = ("soft_a", "hard_y", "soft_b")
    req = ClassificationRequest(cands, appearance_tag="q", tactile_description="d", reference_labels=refs)
    scores = mock_scores(req, k)
    brute = [sum(k.get(r).hardness == k.get(c).hardness for r in refs) / 3 for c in cands]
    assert scores == brute
    assert mock_classify(req, k).chosen_label == cands[max(range(3), key=lambda i: (brute[i], -i))]


def test_mock_tactile_weight_zero_equals_vision_only():
    k = pair_knowledge(w_tactile=0.0)
    cands = ("real_x", "replica_x", "hard_y", "medium_z")
    for tag in ("x", "y", "z", "none"):
        vo = ClassificationRequest(cands, appearance_tag=tag)
        vt = ClassificationRequest(cands, appearance_tag=tag, tactile_description="d",
                                   reference_labels=("soft_a", "soft_b", "medium_z"))
        assert mock_classify(vo, k) == mock_classify(vt, k)


def test_mock_is_pure():
    req = ClassificationRequest(("real_x", "replica_x"), appearance_tag="x", tactile_description="d",
                                reference_labels=("hard_y",))
    assert mock_classify(req, pair_knowledge()) == mock_classify(req, pair_knowledge())


def test_mock_unknown_label():
    with pytest.raises(UnknownLabel):
        mock_classify(ClassificationRequest(("ghost",), appearance_tag="x"), pair_knowledge())


def test_mock_knowledge_from_catalogs():
    k = MockKnowledge.from_catalogs(reference_catalog(), foodreplica_catalog())
    assert k.get("resin_replica_bread").hardness == "hard"
    assert k.get("bread").appearance_tag == k.get("resin_replica_bread").appearance_tag


# ------------------------------------------------------------------ http


class StubServer:
    """Loopback chat-completions server replaying scripted (status, body) replies."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                stub.requests.append({"headers": dict(self.headers), "body": json.loads(body)})
                status, payload = stub.replies.pop(0) if len(stub.replies) > 1 else stub.replies[0]
                data = json.dumps(payload).encode() if not isinstance(payload, bytes) else payload
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def reply(text):
    return 200, {"choices": [{"message": {"role": "assistant", "content": text}}]}


@pytest.fixture
def image(tmp_path):
    p = tmp_path / "strawberry.png"
    p.write_bytes(PNG)
    return str(p)


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("VITAC_TEST_KEY", "sk-test")
    return "VITAC_TEST_KEY"


def backend_for(url, key_env, **kw):
    return HttpBackend(VlmBackendConfig(kind="http", endpoint=url, api_key_env=key_env, **kw), sleep=lambda s: None)


def test_http_request_body(image, api_key):
    req = ClassificationRequest(("strawberry", "resin_replica_strawberry"), appearance_tag="strawberry",
                                image_ref=image, tactile_description="otedama (a soft beanbag)",
                                reference_labels=("otedama",))
    with StubServer([reply("resin_replica_strawberry")]) as stub:
        out = backend_for(stub.url, api_key).classify(req)
    assert out.chosen_label == "resin_replica_strawberry" and out.parse_status == OK
    sent = stub.requests[0]
    body = sent["body"]
    assert body["model"] == "gpt-4o"
    assert body["temperature"] == 0.0
    parts = body["messages"][0]["content"]
    text = [p for p in parts if p["type"] == "text"]
    imgs = [p for p in parts if p["type"] == "image_url"]
    assert len(text) == 1 and "otedama (a soft beanbag)" in text[0]["text"]
    assert len(imgs) == 1
    url = imgs[0]["image_url"]["url"]
    assert url.startswith("data:image/png;base64,")
    assert base64.b64decode(url.split(",", 1)[1]) == PNG
    assert sent["headers"]["Authorization"] == "Bearer sk-test"


def test_http_retries_after_server_error(image, api_key):
    sleeps = []
    with StubServer([(500, {"error": "boom"}), reply("strawberry")]) as stub:
        be = HttpBackend(VlmBackendConfig(kind="http", endpoint=stub.url, api_key_env=api_key, backoff_s=0.5),
                         sleep=sleeps.append)
        out = be.classify(ClassificationRequest(("strawberry", "tomato"), appearance_tag="s", image_ref=image))
    assert len(stub.requests) == 2
    assert sleeps == [0.5]
    assert out.chosen_label == "strawberry"
    assert out.latency_s > 0


def test_http_backoff_is_exponential(api_key):
    sleeps = []
    with StubServer([(503, {})]) as stub:
        be = HttpBackend(VlmBackendConfig(kind="http", endpoint=stub.url, api_key_env=api_key,
                                          max_retries=3, backoff_s=1.0), sleep=sleeps.append)
        with pytest.raises(TransportError):
            be.complete("hi")
    assert len(stub.requests) == 4
    assert sleeps == [1.0, 2.0, 4.0]


def test_http_rate_limited(api_key):
    with StubServer([(429, {})]) as stub:
        with pytest.raises(RateLimited):
            backend_for(stub.url, api_key, max_retries=1).complete("hi")
    assert len(stub.requests) == 2


def test_http_client_error_not_retried(api_key):
    with StubServer([(400, {"error": "bad"})]) as stub:
        with pytest.raises(TransportError):
            backend_for(stub.url, api_key).complete("hi")
    assert len(stub.requests) == 1


def test_http_auth_missing_before_network(monkeypatch):
    monkeypatch.delenv("VITAC_MISSING_KEY", raising=False)
    with StubServer([reply("x")]) as stub:
        with pytest.raises(AuthMissing):
            backend_for(stub.url, "VITAC_MISSING_KEY").complete("hi")
    assert stub.requests == []


def test_http_malformed_response(api_key):
    with StubServer([(200, {"choices": []})]) as stub:
        with pytest.raises(MalformedResponse):
            backend_for(stub.url, api_key).complete("hi")
    with StubServer([(200, b"not json")]) as stub:
        with pytest.raises(MalformedResponse):
            backend_for(stub.url, api_key).complete("hi")


def test_http_connection_refused(api_key):
    with pytest.raises(TransportError):
        backend_for("http://127.0.0.1:9/v1/chat/completions", api_key, max_retries=1, timeout_s=2.0).complete("hi")


def test_http_unparseable_reply_is_recorded(api_key):
    with StubServer([reply("I am not sure")]) as stub:
        out = backend_for(stub.url, api_key).classify(ClassificationRequest(("a", "b"), appearance_tag="x"))
    assert out.chosen_label is None and out.parse_status == NO_MATCH
    assert out.raw_text == "I am not sure"


def test_payload_helpers(image):
    cfg = VlmBackendConfig(model="m", temperature=0.0)
    p = chat_payload("hello", cfg)
    assert p["messages"][0]["content"] == [{"type": "text", "text": "hello"}]
    assert encode_image(image).startswith("data:image/png;base64,")
    assert extract_text({"choices": [{"message": {"content": [{"type": "text", "text": "ab"}]}}]}) == "ab"
    with pytest.raises(MalformedResponse):
        extract_text({"choices": [{"message": {"content": 3}}]})


def test_backend_config_validation():
    with pytest.raises(ValueError):
        VlmBackendConfig(kind="grpc")
    with pytest.raises(ValueError):
        VlmBackendConfig(max_in_flight=0)


def test_classify_many_keeps_order_and_failures():
    class Flaky:
        def classify(self, req):
            if req.appearance_tag == "bad":
                raise TransportError("down")
            return mock_classify(req, pair_knowledge())

    reqs = [ClassificationRequest(("real_x", "replica_x"), appearance_tag=t) for t in ("x", "bad", "x", "bad")]
    for n in (1, 3):
        out = classify_many(Flaky(), reqs, n)
        assert [type(o).__name__ for o in out] == ["VlmOutcome", "TransportError", "VlmOutcome", "TransportError"]
