"""Image stream compression: frames, per-frame and streaming codecs, transparent nodes."""
from .delta import DELTA, KEYFRAME, CodecChunk, CodecState, decode, encode
from .frame import Frame
from .nodes import (CODECS, DecoderNode, EncoderNode, StreamPacket, enc_topic, make_codec,
                    register_codec, resync_topic, src_topic)
from .perframe import per_frame_decode, per_frame_encode
from .synthetic import SyntheticVideo

__all__ = [
    "DELTA", "KEYFRAME", "CodecChunk", "CodecState", "decode", "encode",
    "Frame",
    "CODECS", "DecoderNode", "EncoderNode", "StreamPacket", "enc_topic", "make_codec",
    "register_codec", "resync_topic", "src_topic",
    "per_frame_decode", "per_frame_encode", "SyntheticVideo",
]
