"""Attribute prompt acquisition and embedding assembly.

The instruction template asks a chat model for n property descriptions of
one class, each line shaped "a clean origami {class}. It ...". Replies are
parsed defensively (models add chatter), retried, and cached as fixture
JSON so every downstream run works offline. Fixtures for the built-in
synthetic classes ship with the package.
"""

import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources

from .errors import ContractError, NotFoundError, ProtocolError, TransportError
from .providers import TextEmbedding

ENV_URL = "LDAG_LLM_URL"
ENV_MODEL = "LDAG_LLM_MODEL"
ENV_KEY = "LDAG_LLM_KEY"

DEFAULT_MODEL = "gpt-o1"
FIXTURE_MODEL = "synthetic-fixture-v1"


@dataclass(frozen=True)
class ClassCatalog:
    classes: tuple
    dataset_name: str

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ContractError("a catalog needs at least 2 classes")
        if len(set(self.classes)) != len(self.classes):
            raise ContractError("catalog class names must be unique")
        if any(not c or not c.strip() for c in self.classes):
            raise ContractError("catalog class names must be nonempty")

    def index_of(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise NotFoundError(f"class {name!r} not in catalog {self.dataset_name}") from None


@dataclass
class ChatEndpointConfig:
    url: str = ""
    model: str = DEFAULT_MODEL
    api_key: str = ""
    retries: int = 3
    timeout: float = 30.0

    @classmethod
    def from_env(cls) -> "ChatEndpointConfig":
        return cls(url=os.environ.get(ENV_URL, ""),
                   model=os.environ.get(ENV_MODEL, DEFAULT_MODEL),
                   api_key=os.environ.get(ENV_KEY, ""))


@dataclass
class AttributeSet:
    """The n+1 foreground prompts/embeddings plus one background embedding."""

    class_name: str
    attribute_prompts: list
    template_prompt: str
    background_prompt: str
    foreground: list  # n+1 TextEmbedding, attributes first, template last
    background: TextEmbedding
    provenance: str = "fixture-file"

    @property
    def n(self) -> int:
        return len(self.attribute_prompts)


def template_prompt(class_name: str) -> str:
    return f"a photo of {class_name}"


def background_prompt(class_name: str) -> str:
    return f"a photo without {class_name}"


def required_prefix(class_name: str) -> str:
    return f"a clean origami {class_name}. It "


def build_llm_instruction(catalog: ClassCatalog, target: str, n: int) -> str:
    """The question posed to the chat model; byte-stable for fixed inputs."""
    catalog.index_of(target)
    if n < 1:
        raise ContractError(f"n must be >= 1 to query the model, got {n}")
    class_list = ", ".join(catalog.classes)
    return (
        f"There are {len(catalog.classes)} classes in a dataset: {class_list}, "
        f"List {n} descriptions with key properties to describe the {target} in terms of "
        "appearance, color, shape, size, or material, etc. These descriptions will help "
        f"visually distinguish the {target} from other classes in the dataset. Each "
        f"description should follow the format: 'a clean origami {target}. It + descriptive "
        "contexts'. Do not have any content output other than the given format. And try not "
        "to include any other class names in the description."
    )


_LINE_NOISE = re.compile(r"^\s*(?:[-*•]+|\d+\s*[.):\]]?)?\s*")


def parse_reply(reply: str, class_name: str, n: int) -> list:
    """Keep lines that match the mandated prefix after stripping list markers."""
    prefix = required_prefix(class_name)
    kept = []
    for raw_line in reply.splitlines():
        line = _LINE_NOISE.sub("", raw_line).strip().strip('"\'`').strip()
        if line.lower().startswith(prefix.lower()):
            kept.append(prefix + line[len(prefix):])
        if len(kept) == n:
            break
    return kept


def _slug(text: str) -> str:
    return re.sub(r"[^0-9a-zA-Z.]+", "-", text).strip("-").lower()


def _fixture_name(dataset: str, class_name: str, n: int, model: str) -> str:
    return f"{_slug(dataset)}.{_slug(class_name)}.n{n}.{_slug(model)}.json"


def fixture_path(fixture_dir: str, dataset: str, class_name: str, n: int, model: str) -> str:
    return os.path.join(fixture_dir, _fixture_name(dataset, class_name, n, model))


def load_fixture(path: str):
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return doc["prompts"]


def _packaged_fixture(dataset: str, class_name: str, n: int, model: str):
    name = _fixture_name(dataset, class_name, n, model)
    try:
        blob = resources.files("ldag").joinpath(f"data/fixtures/{name}")
        if blob.is_file():
            return json.loads(blob.read_text(encoding="utf-8"))["prompts"]
    except (FileNotFoundError, ModuleNotFoundError):
        pass
    return None


def save_fixture(path: str, dataset: str, class_name: str, n: int, model: str, prompts) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    doc = {"dataset": dataset, "class": class_name, "n": n, "model": model,
           "prompts": list(prompts)}
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _post_chat(endpoint: ChatEndpointConfig, instruction: str) -> str:
    payload = json.dumps({
        "model": endpoint.model,
        "messages": [{"role": "user", "content": instruction}],
    }).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if endpoint.api_key:
        headers["Authorization"] = f"Bearer {endpoint.api_key}"
    req = urllib.request.Request(endpoint.url, data=payload, headers=headers)
    with urllib.request.urlopen(req, timeout=endpoint.timeout) as resp:
        doc = json.loads(resp.read().decode("utf-8"))
    return doc["choices"][0]["message"]["content"]


def fetch_attributes(instruction: str, endpoint: ChatEndpointConfig, *,
                     dataset: str, class_name: str, n: int,
                     fixture_dir: str = "", offline: bool = False) -> list:
    """Obtain exactly n conforming attribute lines, preferring cached fixtures.

    Live replies that never conform within the retry budget raise
    ProtocolError with the raw reply attached; unreachable endpoints
    without a fixture raise TransportError.
    """
    fpath = fixture_path(fixture_dir, dataset, class_name, n, endpoint.model) if fixture_dir else ""
    cached = load_fixture(fpath) if fpath else None
    if cached is None:
        cached = _packaged_fixture(dataset, class_name, n, endpoint.model)
    if cached is None and endpoint.model != FIXTURE_MODEL:
        # shipped stand-in fixtures answer for any offline run of the synthetic set
        cached = _packaged_fixture(dataset, class_name, n, FIXTURE_MODEL)
    if offline or not endpoint.url:
        if cached is not None:
            return list(cached)
        raise TransportError(
            f"offline and no fixture for ({dataset}, {class_name}, n={n}, {endpoint.model})")
    last_reply = ""
    transport_failure = None
    for _ in range(max(1, endpoint.retries)):
        try:
            last_reply = _post_chat(endpoint, instruction)
        except (urllib.error.URLError, TimeoutError, OSError, KeyError, ValueError) as e:
            transport_failure = e
            continue
        transport_failure = None
        prompts = parse_reply(last_reply, class_name, n)
        if len(prompts) == n:
            if fpath:
                save_fixture(fpath, dataset, class_name, n, endpoint.model, prompts)
            return prompts
    if transport_failure is not None:
        if cached is not None:
            return list(cached)
        raise TransportError(f"chat endpoint unreachable: {transport_failure}")
    raise ProtocolError(
        f"no reply with {n} conforming lines after {endpoint.retries} attempts",
        raw_reply=last_reply)


def assemble(attr_prompts, class_name: str, text_encoder) -> AttributeSet:
    """Embed attribute prompts plus the fixed template and background prompts.

    ``text_encoder(prompt, role)`` must return a TextEmbedding. Order is
    [attr_1 ... attr_n, template]; n = 0 yields the template-only set.
    """
    attr_prompts = list(attr_prompts)
    prefix = required_prefix(class_name)
    for p in attr_prompts:
        if not p.startswith(prefix):
            raise ContractError(f"attribute prompt {p!r} lacks the prefix {prefix!r}")
    tmpl = template_prompt(class_name)
    bg = background_prompt(class_name)
    foreground = [text_encoder(p, "foreground-attribute") for p in attr_prompts]
    foreground.append(text_encoder(tmpl, "foreground-template"))
    return AttributeSet(
        class_name=class_name,
        attribute_prompts=attr_prompts,
        template_prompt=tmpl,
        background_prompt=bg,
        foreground=foreground,
        background=text_encoder(bg, "background"),
    )
