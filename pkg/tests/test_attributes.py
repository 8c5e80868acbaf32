import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from ldag.attributes import (ChatEndpointConfig, ClassCatalog, assemble,
                             background_prompt, build_llm_instruction, fetch_attributes,
                             fixture_path, parse_reply, required_prefix, save_fixture,
                             template_prompt)
from ldag.errors import ContractError, NotFoundError, ProtocolError, TransportError
from ldag.providers import toy_encode_text


def catalog20():
    names = tuple(f"thing{i:02d}" for i in range(19)) + ("bus",)
    return ClassCatalog(classes=names, dataset_name="demo-20")


def test_instruction_contents():
    text = build_llm_instruction(catalog20(), "bus", 5)
    assert "There are 20 classes in a dataset" in text
    assert "List 5 descriptions" in text
    assert "describe the bus" in text
    assert "distinguish the bus" in text
    assert "a clean origami bus. It + descriptive contexts" in text
    assert "Do not have any content output other than the given format" in text


def test_instruction_byte_stable_and_singular():
    a = build_llm_instruction(catalog20(), "bus", 1)
    b = build_llm_instruction(catalog20(), "bus", 1)
    assert a == b
    assert "List 1 descriptions" in a  # same template shape at n=1


def test_instruction_unknown_class():
    with pytest.raises(NotFoundError):
        build_llm_instruction(catalog20(), "spaceship", 5)


def test_catalog_validation():
    with pytest.raises(ContractError):
        ClassCatalog(classes=("solo",), dataset_name="d")
    with pytest.raises(ContractError):
        ClassCatalog(classes=("a", "a"), dataset_name="d")


def test_parse_reply_strips_chatter():
    prefix = required_prefix("bus")
    reply = "\n".join([
        "Sure! Here are the descriptions you asked for:",
        f"1. {prefix}has large glass windows.",
        f"2) \"{prefix}is long and rectangular.\"",
        f"- {prefix}rides on six wheels.",
        "Hope that helps!",
    ])
    lines = parse_reply(reply, "bus", 3)
    assert len(lines) == 3
    assert all(line.startswith(prefix) for line in lines)
    assert lines[0].endswith("has large glass windows.")


def test_parse_reply_rejects_nonconforming():
    assert parse_reply("The bus is large.\nIt is yellow.", "bus", 2) == []


class _ChatStub(BaseHTTPRequestHandler):
    responses = []
    calls = 0

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        assert body["messages"][0]["role"] == "user"
        type(self).calls += 1
        reply = type(self).responses[min(type(self).calls - 1, len(type(self).responses) - 1)]
        payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": reply}}]})
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(payload.encode())

    def log_message(self, *a):
        pass


@pytest.fixture
def chat_server():
    server = HTTPServer(("127.0.0.1", 0), _ChatStub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _ChatStub.calls = 0
    yield server
    server.shutdown()


def _endpoint(server):
    return ChatEndpointConfig(url=f"http://127.0.0.1:{server.server_address[1]}/v1/chat",
                              model="stub-model", retries=3)


def test_fetch_live_success_and_cache(chat_server, tmp_path):
    prefix = required_prefix("bus")
    _ChatStub.responses = ["chatter\n" + "\n".join(f"{i}. {prefix}feature {i}." for i in (1, 2, 3))]
    prompts = fetch_attributes("instr", _endpoint(chat_server), dataset="demo-20",
                               class_name="bus", n=3, fixture_dir=str(tmp_path))
    assert len(prompts) == 3 and _ChatStub.calls == 1
    # cache hit: offline fetch returns identical prompts without the network
    again = fetch_attributes("instr", _endpoint(chat_server), dataset="demo-20",
                             class_name="bus", n=3, fixture_dir=str(tmp_path), offline=True)
    assert again == prompts
    assert _ChatStub.calls == 1


def test_fetch_retries_then_protocol_error(chat_server, tmp_path):
    _ChatStub.responses = ["no conforming lines at all"]
    with pytest.raises(ProtocolError) as exc:
        fetch_attributes("instr", _endpoint(chat_server), dataset="demo-20",
                         class_name="bus", n=2, fixture_dir=str(tmp_path))
    assert _ChatStub.calls == 3  # retried to the limit
    assert "no conforming lines" in exc.value.raw_reply


def test_fetch_short_reply_retries_until_full(chat_server, tmp_path):
    prefix = required_prefix("bus")
    _ChatStub.responses = [f"{prefix}only one.",
                           f"{prefix}first.\n{prefix}second."]
    prompts = fetch_attributes("instr", _endpoint(chat_server), dataset="demo-20",
                               class_name="bus", n=2, fixture_dir=str(tmp_path))
    assert len(prompts) == 2 and _ChatStub.calls == 2


def test_offline_without_fixture_is_transport_error(tmp_path):
    endpoint = ChatEndpointConfig(url="", model="stub-model")
    with pytest.raises(TransportError):
        fetch_attributes("instr", endpoint, dataset="demo-20", class_name="bus", n=3,
                         fixture_dir=str(tmp_path), offline=True)


def test_unreachable_endpoint_without_fixture(tmp_path):
    endpoint = ChatEndpointConfig(url="http://127.0.0.1:9/v1/chat", model="m", retries=2,
                                  timeout=0.2)
    with pytest.raises(TransportError):
        fetch_attributes("instr", endpoint, dataset="demo-20", class_name="bus", n=1,
                         fixture_dir=str(tmp_path))


def test_unreachable_endpoint_falls_back_to_fixture(tmp_path):
    path = fixture_path(str(tmp_path), "demo-20", "bus", 2, "m")
    save_fixture(path, "demo-20", "bus", 2, "m",
                 [required_prefix("bus") + "a.", required_prefix("bus") + "b."])
    endpoint = ChatEndpointConfig(url="http://127.0.0.1:9/v1/chat", model="m", retries=2,
                                  timeout=0.2)
    prompts = fetch_attributes("instr", endpoint, dataset="demo-20", class_name="bus", n=2,
                               fixture_dir=str(tmp_path))
    assert len(prompts) == 2


def test_packaged_fixtures_cover_synthetic_classes():
    from ldag.episodes import DEFAULT_SPECS
    endpoint = ChatEndpointConfig(url="", model="whatever")
    for spec in DEFAULT_SPECS:
        for n in (1, 5, 10):
            prompts = fetch_attributes("instr", endpoint, dataset="synthetic-8",
                                       class_name=spec.name, n=n, offline=True)
            assert len(prompts) == n
            assert all(p.startswith(required_prefix(spec.name)) for p in prompts)


def _enc(seed):
    return lambda text, role: toy_encode_text(text, seed, role)


@pytest.mark.parametrize("n", [0, 1, 5])
def test_assemble_counts_and_order(n):
    prefix = required_prefix("bus")
    prompts = [f"{prefix}feature {i}." for i in range(n)]
    attrs = assemble(prompts, "bus", _enc(3))
    assert attrs.n == n
    assert len(attrs.foreground) == n + 1
    assert attrs.foreground[-1].role == "foreground-template"
    assert attrs.foreground[-1].prompt == template_prompt("bus") == "a photo of bus"
    assert attrs.background.prompt == background_prompt("bus") == "a photo without bus"
    for i, p in enumerate(prompts):
        assert attrs.foreground[i].prompt == p
        assert attrs.foreground[i].role == "foreground-attribute"


def test_assemble_is_stable_across_calls():
    prefix = required_prefix("bus")
    prompts = [f"{prefix}one.", f"{prefix}two."]
    a = assemble(prompts, "bus", _enc(3))
    b = assemble(prompts, "bus", _enc(3))
    for ea, eb in zip(a.foreground + [a.background], b.foreground + [b.background]):
        assert np.array_equal(ea.vector, eb.vector)


def test_assemble_rejects_missing_prefix():
    with pytest.raises(ContractError):
        assemble(["a sloppy origami bus. It leaks."], "bus", _enc(3))
