"""Regenerate the golden wire-protocol fixtures in ../../fixtures.

The request inputs are frozen in sds_request_inputs.npz; the request bytes
are the reference serialization of those inputs, and the response bytes are
the fake backend's answer to exactly those request bytes.  Both client and
server test suites assert against these files, so regenerate only on a
deliberate protocol change.
"""

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from skelfield_server.app import FakeBackend  # noqa: E402
from skelfield_server.protocol import decode_request, encode_request, encode_response  # noqa: E402

FIXTURES = pathlib.Path(__file__).resolve().parents[2] / "fixtures"


def main() -> None:
    inputs_path = FIXTURES / "sds_request_inputs.npz"
    if inputs_path.exists():
        data = np.load(inputs_path)
        z_t = data["z_t"]
        conditioning = data["conditioning"]
        timestep = int(data["timestep"])
        guidance_scale = float(data["guidance_scale"])
        prompt = str(data["prompt"])
    else:
        rng = np.random.default_rng(617)
        z_t = rng.standard_normal((6, 5, 4)).astype("<f4")
        conditioning = rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
        timestep = 617
        guidance_scale = 7.5
        prompt = "a person"
        FIXTURES.mkdir(exist_ok=True)
        np.savez(inputs_path, z_t=z_t, conditioning=conditioning,
                 timestep=timestep, guidance_scale=guidance_scale,
                 prompt=prompt)

    request = encode_request(timestep=timestep, guidance_scale=guidance_scale,
                             prompt=prompt, z_t=z_t, conditioning=conditioning)
    response = encode_response(FakeBackend().predict(decode_request(request), request))
    (FIXTURES / "sds_request.bin").write_bytes(request)
    (FIXTURES / "sds_response.bin").write_bytes(response)
    print(f"wrote {len(request)}-byte request, {len(response)}-byte response")


if __name__ == "__main__":
    main()
