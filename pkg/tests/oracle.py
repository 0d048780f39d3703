"""Independent digest oracle: the coreutils hashing programs."""

import subprocess


def tool_digest(tool: str, data: bytes) -> str:
    out = subprocess.run([tool], input=data, capture_output=True, check=True).stdout
    return out.split()[0].decode()


def tool_digests(data: bytes) -> tuple[str, str, str]:
    return tuple(tool_digest(t, data) for t in ("md5sum", "sha1sum", "sha256sum"))
