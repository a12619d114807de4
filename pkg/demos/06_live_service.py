# Driving the HTTP session service the way the browser client does:
# create a session, set the volume, answer the tone pips, play through a
# practice block, and check the stored state.
#
# This uses the in-process test client; `silab serve --port 8340` runs the
# same app over a real socket.

import tempfile

from fastapi.testclient import TestClient

from silab.service import create_app
from silab.session import Corpus

with tempfile.TemporaryDirectory() as data_dir:
    app = create_app(data_dir, corpus=Corpus.synthetic(440, seed=1))
    client = TestClient(app)

    r = client.post("/api/sessions", json={"participant_id": "demo", "seed": 1})
    print("created:", r.json()["phase"])

    client.post("/api/sessions/demo/volume", json={"value": "65%"})
    client.post("/api/sessions/demo/advance")

    for freq in (500.0, 1000.0, 2000.0, 4000.0):
        audio = client.get(f"/api/sessions/demo/tonepip/{freq}/audio")
        stored = client.post(
            "/api/sessions/demo/tonepip", json={"frequency": freq, "n_pip": 11}
        ).json()
        print(
            f"tone pips at {freq:>6.0f} Hz: {len(audio.content)} WAV bytes, "
            f"reported 11 -> listening level {stored['listening_level_db']:.0f} dB"
        )
    client.post("/api/sessions/demo/advance")

    # one practice block: fetch stimuli one by one, then answer the block
    for _ in range(10):
        desc = client.post("/api/sessions/demo/next-stimulus").json()
        wav = client.get(desc["audio_url"])
        assert wav.status_code == 200
    r = client.post("/api/sessions/demo/blocks/0/answers", json={"answers": ["abcd"] * 10})
    state = r.json()
    print(f"\nafter practice block: phase={state['phase']}, stored={state['answers_stored']}")

    # an invalid answer comes back with per-field diagnostics, nothing stored
    client.post("/api/sessions/demo/advance")
    for _ in range(10):
        client.post("/api/sessions/demo/next-stimulus")
    bad = ["abcd"] * 10
    bad[4] = ""
    r = client.post("/api/sessions/demo/blocks/0/answers", json={"answers": bad})
    print(f"invalid block: HTTP {r.status_code}, code {r.json()['code']}, "
          f"fields {list(r.json()['detail'])}")
