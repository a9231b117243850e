# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: wire header codec and replay-window arithmetic."""

from cpython.bytes cimport PyBytes_FromStringAndSize, PyBytes_AS_STRING
from libc.stdint cimport uint64_t
from libc.string cimport memcpy

cdef enum:
    HEADER_LEN = 20
    MAC_LEN = 16
    OVERHEAD = 36
    VERSION = 1
    WINDOW = 64

OK = 0
ERR_SHORT = 1
ERR_VERSION = 2
ERR_TYPE = 3
ERR_LENGTH = 4

cdef inline bint _known(int t) nogil:
    return (0x01 <= t <= 0x06) or t == 0x10 or t == 0x11

cdef inline uint64_t _load64(const unsigned char* p) nogil:
    cdef uint64_t v = 0
    cdef int i
    for i in range(8):
        v = (v << 8) | p[i]
    return v


def decode_fields(const unsigned char[::1] data):
    cdef Py_ssize_t n = data.shape[0]
    cdef const unsigned char* p
    cdef int msg_type
    cdef Py_ssize_t plen
    if n < OVERHEAD:
        return (ERR_SHORT, 0, b"", 0, b"", b"")
    p = &data[0]
    msg_type = p[1]
    if p[0] != VERSION:
        return (ERR_VERSION, msg_type, b"", 0, b"", b"")
    if not _known(msg_type):
        return (ERR_TYPE, msg_type, b"", 0, b"", b"")
    plen = (<Py_ssize_t>p[18] << 8) | p[19]
    if n != OVERHEAD + plen:
        return (ERR_LENGTH, msg_type, b"", 0, b"", b"")
    return (
        OK,
        msg_type,
        PyBytes_FromStringAndSize(<const char*>(p + 2), 8),
        _load64(p + 10),
        PyBytes_FromStringAndSize(<const char*>(p + HEADER_LEN), plen),
        PyBytes_FromStringAndSize(<const char*>(p + n - MAC_LEN), MAC_LEN),
    )


def encode_fields(int msg_type, bytes session_id, uint64_t seq, bytes payload, bytes mac):
    cdef Py_ssize_t plen = len(payload)
    cdef bytes out = PyBytes_FromStringAndSize(NULL, OVERHEAD + plen)
    cdef unsigned char* p = <unsigned char*>PyBytes_AS_STRING(out)
    cdef int i
    p[0] = VERSION
    p[1] = <unsigned char>msg_type
    memcpy(p + 2, PyBytes_AS_STRING(session_id), 8)
    for i in range(8):
        p[10 + i] = <unsigned char>((seq >> (56 - 8 * i)) & 0xFF)
    p[18] = <unsigned char>((plen >> 8) & 0xFF)
    p[19] = <unsigned char>(plen & 0xFF)
    if plen:
        memcpy(p + HEADER_LEN, PyBytes_AS_STRING(payload), plen)
    memcpy(p + HEADER_LEN + plen, PyBytes_AS_STRING(mac), MAC_LEN)
    return out


def replay_accepts(bint started, uint64_t top, uint64_t bitmap, uint64_t seq):
    cdef uint64_t offset
    if not started or seq > top:
        return True
    offset = top - seq
    if offset >= WINDOW:
        return False
    return not ((bitmap >> offset) & 1)


def replay_update(bint started, uint64_t top, uint64_t bitmap, uint64_t seq):
    cdef uint64_t shift
    if not started:
        return seq, 1
    if seq > top:
        shift = seq - top
        if shift >= WINDOW:
            bitmap = 1
        else:
            bitmap = (bitmap << shift) | 1
        return seq, bitmap
    return top, bitmap | ((<uint64_t>1) << (top - seq))
