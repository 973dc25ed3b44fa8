"""Page-mapped FTL core, pure Python.

Mirrors `_ftl_ext.pyx` call for call; the two are checked against each
other in the test suite, so any change here must land in both.

Block states: FREE, OPEN (current write frontier), FULL, LENT (handed to
a collocated vSSD), ABSENT (spare slot not currently attached).
"""

FREE = 0
OPEN = 1
FULL = 2
LENT = 3
ABSENT = 4


class FtlCore:
    def __init__(self, n_blocks, pages_per_block, n_logical, reserve=2, spare=0):
        if n_blocks < 2 or pages_per_block < 1:
            raise ValueError("need at least 2 blocks of at least 1 page")
        if n_logical < 0 or n_logical > (n_blocks - reserve - 1) * pages_per_block:
            raise ValueError("logical space does not fit the physical space minus reserve")
        self.n_blocks = n_blocks
        self.ppb = pages_per_block
        self.n_logical = n_logical
        self.reserve = reserve
        self.spare = spare
        slots = n_blocks + spare
        self._slots = slots
        self.l2p = [-1] * n_logical
        self.p2l = [-1] * (slots * pages_per_block)
        self.valid = [0] * slots
        self.wp = [0] * slots
        self.erases = [0] * slots
        self.state = [FREE] * n_blocks + [ABSENT] * spare
        self.n_free = n_blocks
        self.n_owned = n_blocks
        self.n_lent = 0
        self.front = -1
        self.host_writes = 0
        self.migrated = 0
        self.total_erases = 0

    # -- allocation ----------------------------------------------------------

    def _open_block(self):
        best = -1
        best_e = 0
        state = self.state
        erases = self.erases
        for b in range(self._slots):
            if state[b] == FREE and (best < 0 or erases[b] < best_e):
                best = b
                best_e = erases[b]
        if best < 0:
            return -1
        state[best] = OPEN
        self.wp[best] = 0
        self.n_free -= 1
        self.front = best
        return best

    def _place(self, lpn, for_gc):
        b = self.front
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

    def write(self, lpn):
        """Out-of-place write of one logical page; -1 if no host space left."""
        if lpn < 0 or lpn >= self.n_logical:
            raise IndexError("logical page out of range")
        old = self.l2p[lpn]
        if old >= 0:
            # invalidate first so the old page never counts as live twice
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

    def read(self, lpn):
        if lpn < 0 or lpn >= self.n_logical:
            raise IndexError("logical page out of range")
        return self.l2p[lpn]

    def prefill(self, n):
        for lpn in range(n):
            if self.write(lpn) < 0:
                raise RuntimeError("prefill ran out of space")

    # -- garbage collection ---------------------------------------------------

    def victim(self):
        """Full block with the fewest valid pages (lowest index on ties), or -1."""
        best = -1
        best_v = 0
        state = self.state
        valid = self.valid
        for b in range(self._slots):
            if state[b] == FULL and (best < 0 or valid[b] < best_v):
                best = b
                best_v = valid[b]
        return best

    def victim_valid(self):
        b = self.victim()
        return -1 if b < 0 else self.valid[b]

    def _evacuate(self, b):
        ppb = self.ppb
        base = b * ppb
        moved = 0
        p2l = self.p2l
        for off in range(self.wp[b]):
            lpn = p2l[base + off]
            if lpn < 0:
                continue
            p2l[base + off] = -1
            self.valid[b] -= 1
            if self._place(lpn, True) < 0:
                raise RuntimeError("out of space while migrating valid pages")
            moved += 1
        self.migrated += moved
        return moved

    def _erase(self, b):
        self.erases[b] += 1
        self.total_erases += 1
        self.wp[b] = 0
        self.valid[b] = 0
        self.state[b] = FREE
        self.n_free += 1

    def gc_step(self):
        """Reclaim one victim block. Returns pages migrated, or -1 if none is reclaimable."""
        b = self.victim()
        if b < 0:
            return -1
        ppb = self.ppb
        room = self.n_free * ppb
        if self.front >= 0:
            room += ppb - self.wp[self.front]
        if self.valid[b] >= ppb or self.valid[b] > room:
            return -1
        moved = self._evacuate(b)
        self._erase(b)
        return moved

    def host_room(self):
        """Pages the host may still write before touching the GC reserve."""
        room = (self.n_free - self.reserve) * self.ppb
        if self.front >= 0:
            room += self.ppb - self.wp[self.front]
        return room if room > 0 else 0

    # -- accounting -----------------------------------------------------------

    def free_blocks(self):
        return self.n_free

    def owned_blocks(self):
        return self.n_owned

    def free_ratio(self):
        # blocks on loan still count against the lender's capacity
        base = self.n_owned + self.n_lent
        return self.n_free / base if base else 0.0

    def valid_pages(self, b):
        return self.valid[b]

    def block_state(self, b):
        return self.state[b]

    def erase_count(self, b):
        return self.erases[b]

    def erase_counts(self):
        return [self.erases[b] for b in range(self._slots) if self.state[b] != ABSENT]

    def mapped_pages(self):
        return sum(1 for p in self.l2p if p >= 0)

    # -- block lending (channel groups) ---------------------------------------

    def lend(self, k):
        """Hand k free blocks to a collocated vSSD; returns their erase counts."""
        if k > self.n_free - self.reserve:
            return None
        out = []
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
        """Lent blocks come home erased, carrying their new erase counts."""
        i = 0
        for b in range(self.n_blocks):
            if i == len(counts):
                break
            if self.state[b] == LENT:
                self.state[b] = FREE
                self.erases[b] = counts[i]
                i += 1
        if i != len(counts):
            raise ValueError("more blocks returned than were lent")
        self.n_free += i
        self.n_owned += i
        self.n_lent -= i

    def attach(self, counts):
        """Activate spare slots as free blocks with the lender's erase counts."""
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
        """Evacuate and erase every attached spare block; returns their erase counts.

        Returns None if the owned blocks lack room for the borrowed live data.
        """
        ppb = self.ppb
        held = [b for b in range(self.n_blocks, self._slots) if self.state[b] != ABSENT]
        live = sum(self.valid[b] for b in held)
        own_room = 0
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
        # keep the landing zone inside the vSSD's own blocks
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
