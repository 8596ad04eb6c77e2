"""Reference external prediction oracle.

Speaks the line-delimited JSON protocol over stdin/stdout: a hello
handshake first, then one probs response per predict request, an error
response for anything unparseable, and a clean exit on bye. Logs go to
stderr only; stdout carries nothing but protocol lines.
"""

from .models import EchoModel, load_model
from .server import OracleSession, serve

__version__ = "0.1.0"

__all__ = ["EchoModel", "OracleSession", "load_model", "serve"]
