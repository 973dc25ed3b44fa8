# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Page-mapped FTL core, compiled. Same behaviour as `_ftl_py.FtlCore`."""

from libc.stdlib cimport malloc, free

cdef enum:
    FREE = 0
    OPEN = 1
    FULL = 2
    LENT = 3
    ABSENT = 4


cdef class FtlCore:
    cdef public int n_blocks, ppb, n_logical, reserve, spare
    cdef int _slots
    cdef int *l2p
    cdef int *p2l
    cdef int *valid
    cdef int *wp
    cdef long long *erases
    cdef unsigned char *state
    cdef public int n_free, n_owned, n_lent, front
    cdef public long long host_writes, migrated, total_erases

    def __cinit__(self, int n_blocks, int pages_per_block, int n_logical, int reserve=2, int spare=0):
        self.l2p = NULL
        self.p2l = NULL
        self.valid = NULL
        self.wp = NULL
        self.erases = NULL
        self.state = NULL
        if n_blocks < 2 or pages_per_block < 1:
            raise ValueError("need at least 2 blocks of at least 1 page")
        if n_logical < 0 or n_logical > (n_blocks - reserve - 1) * pages_per_block:
            raise ValueError("logical space does not fit the physical space minus reserve")
        self.n_blocks = n_blocks
        self.ppb = pages_per_block
        self.n_logical = n_logical
        self.reserve = reserve
        self.spare = spare
        self._slots = n_blocks + spare
        cdef int slots = self._slots
        cdef int i
        self.l2p = <int *> malloc(max(n_logical, 1) * sizeof(int))
        self.p2l = <int *> malloc(slots * pages_per_block * sizeof(int))
        self.valid = <int *> malloc(slots * sizeof(int))
        self.wp = <int *> malloc(slots * sizeof(int))
        self.erases = <long long *> malloc(slots * sizeof(long long))
        self.state = <unsigned char *> malloc(slots * sizeof(unsigned char))
        if not (self.l2p and self.p2l and self.valid and self.wp and self.erases and self.state):
            raise MemoryError()
        for i in range(n_logical):
            self.l2p[i] = -1
        for i in range(slots * pages_per_block):
            self.p2l[i] = -1
        for i in range(slots):
            self.valid[i] = 0
            self.wp[i] = 0
            self.erases[i] = 0
            self.state[i] = FREE if i < n_blocks else ABSENT
        self.n_free = n_blocks
        self.n_owned = n_blocks
        self.n_lent = 0
        self.front = -1
        self.host_writes = 0
        self.migrated = 0
        self.total_erases = 0

    def __dealloc__(self):
        free(self.l2p)
        free(self.p2l)
        free(self.valid)
        free(self.wp)
        free(self.erases)
        free(self.state)

    # -- allocation ----------------------------------------------------------

    cdef int _open_block(self):
        cdef int b, best = -1
        cdef long long best_e = 0
        for b in range(self._slots):
            if self.state[b] == FREE and (best < 0 or self.erases[b] < best_e):
                best = b
                best_e = self.erases[b]
        if best < 0:
            return -1
        self.state[best] = OPEN
        self.wp[best] = 0
        self.n_free -= 1
        self.front = best
        return best

    cdef int _place(self, int lpn, bint for_gc):
        cdef int b = self.front
        cdef int ppn
        if b < 0 or self.wp[b] >= self.ppb:
            if b >= 0:
                self.state[b] = FULL
                self.front = -1
            if not for_gc and self.n_free <= self.reserve:
                return -1
            b = self._open_block()
            if b < 0:
                return -1
        ppn = b * self.ppb + self.wp[b]
        self.wp[b] += 1
        self.p2l[ppn] = lpn
        self.valid[b] += 1
        self.l2p[lpn] = ppn
        return ppn

    # -- host interface -------------------------------------------------------

    cpdef int write(self, int lpn) except -2:
        if lpn < 0 or lpn >= self.n_logical:
            raise IndexError("logical page out of range")
        cdef int old = self.l2p[lpn]
        cdef int ppn
        if old >= 0:
            self.p2l[old] = -1
            self.valid[old // self.ppb] -= 1
            self.l2p[lpn] = -1
        ppn = self._place(lpn, False)
        if ppn < 0:
            if old >= 0:
                self.p2l[old] = lpn
                self.valid[old // self.ppb] += 1
                self.l2p[lpn] = old
            return -1
        self.host_writes += 1
        return ppn

    cpdef int read(self, int lpn) except -2:
        if lpn < 0 or lpn >= self.n_logical:
            raise IndexError("logical page out of range")
        return self.l2p[lpn]

    def prefill(self, int n):
        cdef int lpn
        for lpn in range(n):
            if self.write(lpn) < 0:
                raise RuntimeError("prefill ran out of space")

    # -- garbage collection ---------------------------------------------------

    cpdef int victim(self):
        cdef int b, best = -1, best_v = 0
        for b in range(self._slots):
            if self.state[b] == FULL and (best < 0 or self.valid[b] < best_v):
                best = b
                best_v = self.valid[b]
        return best

    cpdef int victim_valid(self):
        cdef int b = self.victim()
        return -1 if b < 0 else self.valid[b]

    cdef int _evacuate(self, int b) except -1:
        cdef int base = b * self.ppb
        cdef int moved = 0
        cdef int off, lpn
        for off in range(self.wp[b]):
            lpn = self.p2l[base + off]
            if lpn < 0:
                continue
            self.p2l[base + off] = -1
            self.valid[b] -= 1
            if self._place(lpn, True) < 0:
                raise RuntimeError("out of space while migrating valid pages")
            moved += 1
        self.migrated += moved
        return moved

    cdef void _erase(self, int b):
        self.erases[b] += 1
        self.total_erases += 1
        self.wp[b] = 0
        self.valid[b] = 0
        self.state[b] = FREE
        self.n_free += 1

    cpdef int gc_step(self) except -2:
        cdef int b = self.victim()
        cdef int room, moved
        if b < 0:
            return -1
        room = self.n_free * self.ppb
        if self.front >= 0:
            room += self.ppb - self.wp[self.front]
        if self.valid[b] >= self.ppb or self.valid[b] > room:
            return -1
        moved = self._evacuate(b)
        self._erase(b)
        return moved

    cpdef int host_room(self):
        cdef int room = (self.n_free - self.reserve) * self.ppb
        if self.front >= 0:
            room += self.ppb - self.wp[self.front]
        return room if room > 0 else 0

    # -- accounting -----------------------------------------------------------

    cpdef int free_blocks(self):
        return self.n_free

    cpdef int owned_blocks(self):
        return self.n_owned

    cpdef double free_ratio(self):
        # blocks on loan still count against the lender's capacity
        cdef int base = self.n_owned + self.n_lent
        return self.n_free / <double> base if base else 0.0

    def valid_pages(self, int b):
        return self.valid[b]

    def block_state(self, int b):
        return self.state[b]

    def erase_count(self, int b):
        return self.erases[b]

    def erase_counts(self):
        return [self.erases[b] for b in range(self._slots) if self.state[b] != ABSENT]

    def mapped_pages(self):
        cdef int i, n = 0
        for i in range(self.n_logical):
            if self.l2p[i] >= 0:
                n += 1
        return n

    # -- block lending (channel groups) ---------------------------------------

    def lend(self, int k):
        if k > self.n_free - self.reserve:
            return None
        out = []
        cdef int b
        for b in range(self.n_blocks - 1, -1, -1):
            if len(out) == k:
                break
            if self.state[b] == FREE:
                self.state[b] = LENT
                out.append(self.erases[b])
        self.n_free -= k
        self.n_owned -= k
        self.n_lent += k
        return out

    def take_back(self, counts):
        cdef int b, i = 0, n = len(counts)
        for b in range(self.n_blocks):
            if i == n:
                break
            if self.state[b] == LENT:
                self.state[b] = FREE
                self.erases[b] = counts[i]
                i += 1
        if i != n:
            raise ValueError("more blocks returned than were lent")
        self.n_free += i
        self.n_owned += i
        self.n_lent -= i

    def attach(self, counts):
        slots = [b for b in range(self.n_blocks, self._slots) if self.state[b] == ABSENT]
        if len(slots) < len(counts):
            raise ValueError("not enough spare slots")
        for b, e in zip(slots, counts):
            self.state[b] = FREE
            self.erases[b] = e
            self.wp[b] = 0
            self.valid[b] = 0
        self.n_free += len(counts)
        self.n_owned += len(counts)
        return len(counts)

    def borrowed(self):
        return sum(1 for b in range(self.n_blocks, self._slots) if self.state[b] != ABSENT)

    def release(self):
        cdef int ppb = self.ppb
        held = [b for b in range(self.n_blocks, self._slots) if self.state[b] != ABSENT]
        live = sum(self.valid[b] for b in held)
        cdef int own_room = 0
        cdef int b
        for b in range(self.n_blocks):
            if self.state[b] == FREE:
                own_room += ppb
        if self.front >= 0 and self.front < self.n_blocks:
            own_room += ppb - self.wp[self.front]
        if live > own_room:
            return None
        if self.front >= self.n_blocks:
            self.state[self.front] = FULL
            self.front = -1
        for b in held:
            if self.state[b] == FREE:
                self.state[b] = LENT
                self.n_free -= 1
        out = []
        for b in held:
            if self.state[b] == FULL:
                self._evacuate(b)
                self.erases[b] += 1
                self.total_erases += 1
                self.wp[b] = 0
            out.append(self.erases[b])
            self.state[b] = ABSENT
            self.valid[b] = 0
        self.n_owned -= len(held)
        return out
