"""Native ELF reader: dynamic-linking facts straight from the bytes.

Everything is resolved through the ELF header, program headers and the
dynamic segment. Section headers are deliberately ignored: stripped
binaries may not have them, and the dynamic loader does not need them
either.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum, IntEnum

ELF_MAGIC = b"\x7fELF"

# e_ident indexes
EI_CLASS = 4
EI_DATA = 5
ELFCLASS32, ELFCLASS64 = 1, 2
ELFDATA2LSB, ELFDATA2MSB = 1, 2

# e_type
ET_REL, ET_EXEC, ET_DYN = 1, 2, 3

# program header types
PT_LOAD, PT_DYNAMIC, PT_INTERP = 1, 2, 3

# dynamic tags
DT_NULL = 0
DT_NEEDED = 1
DT_HASH = 4
DT_STRTAB = 5
DT_SYMTAB = 6
DT_STRSZ = 10
DT_SYMENT = 11
DT_SONAME = 14
DT_RPATH = 15
DT_RUNPATH = 29
DT_GNU_HASH = 0x6FFFFEF5

# symbol bindings
STB_LOCAL, STB_GLOBAL, STB_WEAK = 0, 1, 2
SHN_UNDEF = 0


class ElfError(Exception):
    """Base for all parse failures."""


class NotElf(ElfError):
    """Magic bytes do not identify an ELF file; skip it."""


class Truncated(ElfError):
    """A header or table extends past the end of the file."""


class Malformed(ElfError):
    """Internally inconsistent structure (e.g. unmapped table address)."""


class WordSize(IntEnum):
    BITS32 = 32
    BITS64 = 64


class ByteOrder(Enum):
    LITTLE = "little"
    BIG = "big"


class ObjectType(Enum):
    EXECUTABLE = "executable"
    SHARED_OBJECT = "shared-object"
    RELOCATABLE = "relocatable"
    OTHER = "other"


class FileKind(Enum):
    EXECUTABLE_BINARY = "executable"
    SHARED_LIBRARY = "library"
    NOT_ELF = "not-elf"
    ELF_OTHER = "elf-other"


@dataclass(frozen=True)
class ElfSummary:
    """Dynamic-linking facts of one ELF file.

    String values are byte-faithful to the file's string tables
    (decoded with surrogateescape, so arbitrary bytes round-trip).
    """

    word_size: WordSize
    byte_order: ByteOrder
    object_type: ObjectType
    object_type_code: int
    has_interpreter: bool
    soname: str | None = None
    needed: tuple[str, ...] = ()
    rpath: str | None = None
    runpath: str | None = None
    undefined_symbols: frozenset[str] = frozenset()
    exported_symbols: frozenset[str] = frozenset()
    # subset of undefined_symbols whose absence the loader tolerates
    weak_undefined_symbols: frozenset[str] = frozenset()


_OBJECT_TYPES = {
    ET_EXEC: ObjectType.EXECUTABLE,
    ET_DYN: ObjectType.SHARED_OBJECT,
    ET_REL: ObjectType.RELOCATABLE,
}


def _u16(data: bytes, off: int, en: str) -> int:
    if off + 2 > len(data):
        raise Truncated(f"u16 at {off} past end of file")
    return struct.unpack_from(en + "H", data, off)[0]


def _u32(data: bytes, off: int, en: str) -> int:
    if off + 4 > len(data):
        raise Truncated(f"u32 at {off} past end of file")
    return struct.unpack_from(en + "I", data, off)[0]


def _u64(data: bytes, off: int, en: str) -> int:
    if off + 8 > len(data):
        raise Truncated(f"u64 at {off} past end of file")
    return struct.unpack_from(en + "Q", data, off)[0]


def _decode(raw: bytes) -> str:
    return raw.decode("utf-8", "surrogateescape")


class _Reader:
    """One parse pass over an in-memory ELF image."""

    def __init__(self, data: bytes):
        if len(data) < 4 or data[:4] != ELF_MAGIC:
            raise NotElf("bad magic")
        if len(data) < 16:
            raise Truncated("e_ident cut short")
        self.data = data
        ei_class = data[EI_CLASS]
        ei_data = data[EI_DATA]
        if ei_class == ELFCLASS32:
            self.bits = WordSize.BITS32
        elif ei_class == ELFCLASS64:
            self.bits = WordSize.BITS64
        else:
            raise Malformed(f"unknown EI_CLASS {ei_class}")
        if ei_data == ELFDATA2LSB:
            self.order = ByteOrder.LITTLE
            self.en = "<"
        elif ei_data == ELFDATA2MSB:
            self.order = ByteOrder.BIG
            self.en = ">"
        else:
            raise Malformed(f"unknown EI_DATA {ei_data}")
        self._addr = _u64 if self.bits == WordSize.BITS64 else _u32
        self.loads: list[tuple[int, int, int]] = []  # (vaddr, filesz, offset)

    def parse(self) -> ElfSummary:
        data, en = self.data, self.en
        is64 = self.bits == WordSize.BITS64
        e_type = _u16(data, 16, en)
        e_phoff = self._addr(data, 32 if is64 else 28, en)
        e_phentsize = _u16(data, 54 if is64 else 42, en)
        e_phnum = _u16(data, 56 if is64 else 44, en)

        dynamic_span = None
        has_interp = False
        if e_phnum:
            min_phent = 56 if is64 else 32
            if e_phentsize < min_phent:
                raise Malformed(f"e_phentsize {e_phentsize} too small")
            if e_phoff + e_phnum * e_phentsize > len(data):
                raise Truncated("program header table past end of file")
            for i in range(e_phnum):
                off = e_phoff + i * e_phentsize
                p_type = _u32(data, off, en)
                if is64:
                    p_offset = _u64(data, off + 8, en)
                    p_vaddr = _u64(data, off + 16, en)
                    p_filesz = _u64(data, off + 32, en)
                else:
                    p_offset = _u32(data, off + 4, en)
                    p_vaddr = _u32(data, off + 8, en)
                    p_filesz = _u32(data, off + 16, en)
                if p_type == PT_LOAD:
                    if p_offset + p_filesz > len(data):
                        raise Truncated("PT_LOAD data past end of file")
                    self.loads.append((p_vaddr, p_filesz, p_offset))
                elif p_type == PT_DYNAMIC:
                    if p_offset + p_filesz > len(data):
                        raise Truncated("PT_DYNAMIC past end of file")
                    dynamic_span = (p_offset, p_filesz)
                elif p_type == PT_INTERP:
                    has_interp = True

        object_type = _OBJECT_TYPES.get(e_type, ObjectType.OTHER)
        summary = dict(
            word_size=self.bits,
            byte_order=self.order,
            object_type=object_type,
            object_type_code=e_type,
            has_interpreter=has_interp,
        )
        if dynamic_span is None:
            return ElfSummary(**summary)

        tags = self._read_dynamic(*dynamic_span)
        strtab = self._strtab_view(tags)
        needed = []
        for idx in tags.get(DT_NEEDED, ()):
            name = self._string(strtab, idx)
            if name:
                needed.append(name)
        soname = rpath = runpath = None
        if DT_SONAME in tags:
            soname = self._string(strtab, tags[DT_SONAME][0]) or None
        if DT_RPATH in tags:
            rpath = self._string(strtab, tags[DT_RPATH][0])
        if DT_RUNPATH in tags:
            runpath = self._string(strtab, tags[DT_RUNPATH][0])

        undefined, exported, weak_und = self._read_symbols(tags, strtab)
        return ElfSummary(
            soname=soname,
            needed=tuple(needed),
            rpath=rpath,
            runpath=runpath,
            undefined_symbols=frozenset(undefined),
            exported_symbols=frozenset(exported),
            weak_undefined_symbols=frozenset(weak_und),
            **summary,
        )

    def _read_dynamic(self, offset: int, filesz: int) -> dict[int, list[int]]:
        entsize = 16 if self.bits == WordSize.BITS64 else 8
        fmt = self.en + ("qQ" if self.bits == WordSize.BITS64 else "iI")
        tags: dict[int, list[int]] = {}
        for i in range(filesz // entsize):
            d_tag, d_val = struct.unpack_from(fmt, self.data, offset + i * entsize)
            if d_tag == DT_NULL:
                break
            tags.setdefault(d_tag, []).append(d_val)
        return tags

    def _vaddr_to_offset(self, addr: int) -> int:
        for vaddr, filesz, offset in self.loads:
            if vaddr <= addr < vaddr + filesz:
                return offset + (addr - vaddr)
        raise Malformed(f"address {addr:#x} maps into no PT_LOAD segment")

    def _strtab_view(self, tags: dict[int, list[int]]) -> tuple[int, int] | None:
        """(file offset, byte length) of the dynamic string table, or None."""
        if DT_STRTAB not in tags:
            return None
        off = self._vaddr_to_offset(tags[DT_STRTAB][0])
        size = len(self.data) - off
        if DT_STRSZ in tags:
            size = min(size, tags[DT_STRSZ][0])
        return off, size

    def _string(self, strtab: tuple[int, int] | None, idx: int) -> str:
        if strtab is None:
            raise Malformed("string referenced but no DT_STRTAB")
        off, size = strtab
        if idx >= size:
            raise Malformed(f"string index {idx} outside string table")
        end = self.data.find(b"\x00", off + idx, off + size)
        if end < 0:
            raise Malformed("unterminated string in string table")
        return _decode(self.data[off + idx : end])

    def _symbol_count(self, tags: dict[int, list[int]], sym_off: int, syment: int) -> int:
        """Number of dynamic symbol entries, bounded by what the file can hold."""
        cap = (len(self.data) - sym_off) // syment
        count = 0
        if DT_HASH in tags:
            try:
                hash_off = self._vaddr_to_offset(tags[DT_HASH][0])
                count = _u32(self.data, hash_off + 4, self.en)  # nchain
            except ElfError:
                count = 0
        if not count and DT_GNU_HASH in tags:
            try:
                count = self._gnu_hash_count(self._vaddr_to_offset(tags[DT_GNU_HASH][0]))
            except ElfError:
                count = 0
        if not count and DT_STRTAB in tags:
            # common layout: .dynsym immediately precedes .dynstr
            str_off = self._vaddr_to_offset(tags[DT_STRTAB][0])
            if str_off > sym_off:
                count = (str_off - sym_off) // syment
        return min(count, cap)

    def _gnu_hash_count(self, off: int) -> int:
        data, en = self.data, self.en
        nbuckets = _u32(data, off, en)
        symoffset = _u32(data, off + 4, en)
        bloom_size = _u32(data, off + 8, en)
        word = 8 if self.bits == WordSize.BITS64 else 4
        buckets_off = off + 16 + bloom_size * word
        if nbuckets > (len(data) - buckets_off) // 4:
            return 0
        chains_off = buckets_off + nbuckets * 4
        last = 0
        for i in range(nbuckets):
            b = _u32(data, buckets_off + i * 4, en)
            last = max(last, b)
        if last < symoffset:
            return symoffset  # all buckets empty
        # walk the chain of the highest bucket to its terminator
        idx = last
        while True:
            entry_off = chains_off + (idx - symoffset) * 4
            if entry_off + 4 > len(data):
                return 0
            if _u32(data, entry_off, en) & 1:
                return idx + 1
            idx += 1

    def _read_symbols(
        self, tags: dict[int, list[int]], strtab: tuple[int, int] | None
    ) -> tuple[set[str], set[str], set[str]]:
        undefined: set[str] = set()
        exported: set[str] = set()
        weak_und: set[str] = set()
        if DT_SYMTAB not in tags or strtab is None:
            return undefined, exported, weak_und
        sym_off = self._vaddr_to_offset(tags[DT_SYMTAB][0])
        is64 = self.bits == WordSize.BITS64
        default_ent = 24 if is64 else 16
        syment = tags.get(DT_SYMENT, [default_ent])[0]
        if syment < default_ent:
            raise Malformed(f"DT_SYMENT {syment} smaller than symbol entry")
        count = self._symbol_count(tags, sym_off, syment)
        for i in range(1, count):  # entry 0 is the reserved null symbol
            off = sym_off + i * syment
            name_idx = _u32(self.data, off, self.en)
            if is64:
                info = self.data[off + 4]
                shndx = _u16(self.data, off + 6, self.en)
            else:
                info = self.data[off + 12]
                shndx = _u16(self.data, off + 14, self.en)
            if name_idx == 0:
                continue
            try:
                name = self._string(strtab, name_idx)
            except Malformed:
                continue  # garbage entry; keep scanning
            name = name.split("@", 1)[0]  # version decoration is out of scope
            if not name:
                continue
            bind = info >> 4
            if shndx == SHN_UNDEF:
                if bind != STB_LOCAL:
                    undefined.add(name)
                    if bind == STB_WEAK:
                        weak_und.add(name)
            elif bind in (STB_GLOBAL, STB_WEAK):
                exported.add(name)
        # a name both defined and referenced in one file is satisfied locally
        undefined -= exported
        weak_und &= undefined
        return undefined, exported, weak_und


def parse_elf(data: bytes) -> ElfSummary:
    """Parse the full content of a file; raises NotElf/Truncated/Malformed."""
    return _Reader(data).parse()


def classify_kind(summary: ElfSummary, path: str = "") -> FileKind:
    """Map parsed facts to a file kind. The path is informational only."""
    if summary.object_type is ObjectType.EXECUTABLE:
        return FileKind.EXECUTABLE_BINARY
    if summary.object_type is ObjectType.SHARED_OBJECT:
        # position-independent executables are ET_DYN with a PT_INTERP
        if summary.has_interpreter:
            return FileKind.EXECUTABLE_BINARY
        return FileKind.SHARED_LIBRARY
    return FileKind.ELF_OTHER
