"""Hot interpreter loops over flat numpy state.

Everything here runs under ``numba.njit`` unless ``ISOFUZZ_NO_JIT=1``, in
which case the very same functions execute as plain Python (see
:mod:`isofuzz._jit`).  The higher-level modules never touch these arrays
directly; they go through :mod:`isofuzz.isa`, :mod:`isofuzz.model` and
:mod:`isofuzz.executor`.

One step function, :func:`exec_one`, defines the architectural semantics for
both the contract model and the simulated CPU.  The simulator adds the
microarchitectural side (cache lines, store buffer, divider state, transient
windows, transition noise) around it.
"""
import numpy as np

from ._jit import njit

# ---------------------------------------------------------------------------
# geometry
PAGE = 4096
LINE = 64
WORDS_PER_PAGE = PAGE // 8
MAX_ACTORS = 8
NVPN = 64  # virtual pages per address space
VA_LIMIT = NVPN * PAGE
CODE_VA = 0x8000
DATA_VA = 0x10000
ACTOR_DATA_STRIDE = 0x4000  # 3 data pages + probe page
PAGES_PER_ACTOR = 5  # code, data0, data1, data2, probe
NFRAMES = 1 + PAGES_PER_ACTOR * MAX_ACTORS  # frame 0 is never mapped
MEM_WORDS = NFRAMES * WORDS_PER_PAGE
NLINES = NFRAMES * (PAGE // LINE)
DATA_WORDS = 3 * WORDS_PER_PAGE
SB_CAPACITY = 32
N_PRIV = 8
WINDOW = 16

# ---------------------------------------------------------------------------
# opcodes (public ISA) and internal pseudo-ops
OP_NOP = 0
OP_ADD = 1
OP_SUB = 2
OP_AND = 3
OP_OR = 4
OP_XOR = 5
OP_SHL = 6
OP_SHR = 7
OP_CMP = 8
OP_CMOV = 9
OP_MUL = 10
OP_DIV = 11
OP_LOAD = 12
OP_STORE = 13
OP_BR = 14
OP_FENCE = 15
OP_RDPRIV = 16
N_OPCODES = 17
OP_MACRO = 0x40  # executor-patched macro routine body
OP_EXIT = 0x41  # sentinel one past the last instruction of an actor

IMM_FLAG = 0x80

# condition codes
C_EQ = 0
C_NE = 1
C_B = 2
C_AE = 3
C_S = 4
C_NS = 5
C_A = 6
C_BE = 7
C_AL = 8
N_CONDS = 9

# decoded instruction fields
F_OP = 0
F_DST = 1
F_S1 = 2
F_B3 = 3
F_DISP = 4
F_IMM = 5
N_FIELDS = 6

# page-table entry bits
B_P = 1
B_W = 2
B_U = 4
B_A = 8
B_D = 16
B_R = 32
B_ALL = B_P | B_W | B_U | B_A | B_D

# fault / assist codes
F_NONE = 0
PF_P = 1
PF_R = 2
PF_U = 3
PF_W = 4
VM_P = 5
VM_R = 6
VM_W = 7
GP = 8
DE = 9
VM_PRIV = 10
AS_A = 11
AS_D = 12
AS_NA = 13
AS_ND = 14
FIRST_ASSIST = AS_A

# actor table columns
A_MODE = 0  # 0 host, 1 guest
A_PRIV = 1  # 0 kernel, 1 user
A_OBS = 2
A_SPACE = 3
A_BASE = 4  # data sandbox VA
A_PROBE = 5  # probe page VA
A_HF = 6  # first of PAGES_PER_ACTOR host frames
N_ACOLS = A_HF + PAGES_PER_ACTOR

# macro ids (also the package macro_id column)
M_RANDOM = 0
M_MEAS_START = 1
M_MEAS_END = 2
M_SWITCH_H2G = 3
M_SWITCH_G2H = 4
M_SET_H2G = 5
M_SET_G2H = 6
M_SWITCH_K2U = 7
M_SWITCH_U2K = 8
M_SET_K2U = 9
M_SET_U2K = 10
M_FAULT_HANDLER = 11
M_FLUSH_BUFFERS = 12
M_FLUSH_L1D = 13
M_FULL_FLUSH = 14
M_DUMMY_DIV = 15

# macro table columns
MC_ID = 0
MC_OWNER = 1
MC_IDX = 2
MC_A0 = 3
MC_A1 = 4
N_MCOLS = 5

# bug toggle bits
T_MELTDOWN = 1
T_FORESHADOW = 2
T_MDS = 4
T_DSS = 8
T_RSRR = 16
T_SMSW = 32

# params vector
P_TOGGLES = 0
P_PRIV_DISABLE = 1
P_WINDOW = 2
P_BUDGET = 3
P_FH_ACTOR = 4
P_FH_IDX = 5
P_PRIV_SRC = 6
N_PARAMS = 7

# scalar machine state
S_CUR = 0
S_PC = 1
S_STEPS = 2
S_IN_HANDLER = 3
S_SB_COUNT = 4
S_SB_HEAD = 5
S_DIVQ = 6
S_DIVR = 7
S_PROBE = 8
S_MEAS = 9  # 0 idle, 1 measuring, 2 done
S_TRACE = 10
S_TRACING = 11  # model: contract tracing enabled
S_NEV = 12
S_EV_OVERFLOW = 13
S_TRANSITIONS = 14
S_FAULTS = 15
N_STATE = 16

# contract events
EV_PC = 1
EV_LD = 2
EV_ST = 3
MAX_EVENTS = 4096

# execute() result
R_EXIT = 0
R_BUDGET = 1

# exec_one status
X_OK = 0
X_TAKEN = 1
X_FAULT = 2
X_ASSIST = 3
X_EXIT = 4
X_MACRO = 5
X_STOP = 6  # serialising instruction inside a transient window

SIGN = np.int64(-9223372036854775808)
LO32 = np.int64(0xFFFFFFFF)
LO16 = np.int64(0xFFFF)
ONE = np.int64(1)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_U63 = np.uint64(63)
_INV53 = 1.0 / 9007199254740992.0


# ---------------------------------------------------------------------------
# scalar helpers


@njit
def ult(a, b):
    """Unsigned 64-bit a < b on int64 storage."""
    return (a ^ SIGN) < (b ^ SIGN)


@njit
def lshr(a, s):
    if s == 0:
        return a
    return (a >> s) & ((ONE << (64 - s)) - 1)


@njit
def cond_holds(cond, fl):
    zf = fl[0]
    cf = fl[1]
    sf = fl[2]
    if cond == C_EQ:
        return zf == 1
    if cond == C_NE:
        return zf == 0
    if cond == C_B:
        return cf == 1
    if cond == C_AE:
        return cf == 0
    if cond == C_S:
        return sf == 1
    if cond == C_NS:
        return sf == 0
    if cond == C_A:
        return cf == 0 and zf == 0
    if cond == C_BE:
        return cf == 1 or zf == 1
    return True


@njit
def set_zs(fl, v):
    fl[0] = 1 if v == 0 else 0
    fl[2] = 1 if v < 0 else 0


@njit
def rng_next(st):
    """splitmix64 step; ``st`` is a uint64[1] array."""
    z = st[0] + _GOLDEN
    st[0] = z
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit
def rng_uniform(st):
    return float(rng_next(st) >> _S11) * _INV53


@njit
def rng_bit(st):
    return np.int64(rng_next(st) & _U63)


# ---------------------------------------------------------------------------
# address translation


@njit
def translate(vaddr, access, actor, actors, l1f, l1b, nf, nb, space_guest, update_ad):
    """Walk the actor's tables.

    ``access`` is 0 read, 1 write, 2 exec.  Returns ``(code, paddr, raw)``:
    ``code`` is F_NONE, a fault code, or an assist code (the access is
    otherwise legal and ``paddr`` is valid); ``raw`` is the first-level frame
    field interpreted as a host-physical address (what an L1TF-style lookup
    would use), or -1 when no frame is available.
    """
    if vaddr < 0 or vaddr >= VA_LIMIT:
        return PF_P, np.int64(-1), np.int64(-1)
    vpn = vaddr >> 12
    off = vaddr & (PAGE - 1)
    sp = actors[actor, A_SPACE]
    bits = l1b[sp, vpn]
    fr = l1f[sp, vpn]
    raw = fr * PAGE + off
    write = access == 1
    if bits & B_P == 0:
        return PF_P, np.int64(-1), raw
    if bits & B_R != 0:
        return PF_R, raw, raw
    if actors[actor, A_PRIV] == 1 and bits & B_U == 0:
        return PF_U, raw, raw
    if write and bits & B_W == 0:
        return PF_W, raw, raw
    assist = F_NONE
    if bits & B_A == 0:
        assist = AS_A
    elif write and bits & B_D == 0:
        assist = AS_D
    if update_ad and assist != F_NONE:
        l1b[sp, vpn] = bits | B_A | (B_D if write else 0)
    paddr = raw
    if space_guest[sp] == 1:
        nbits = nb[sp, fr]
        hfr = nf[sp, fr]
        if nbits & B_P == 0:
            return VM_P, np.int64(-1), raw
        if nbits & B_R != 0:
            return VM_R, hfr * PAGE + off, raw
        if write and nbits & B_W == 0:
            return VM_W, hfr * PAGE + off, raw
        nassist = F_NONE
        if nbits & B_A == 0:
            nassist = AS_NA
        elif write and nbits & B_D == 0:
            nassist = AS_ND
        if update_ad and nassist != F_NONE:
            nb[sp, fr] = nbits | B_A | (B_D if write else 0)
        if assist == F_NONE:
            assist = nassist
        paddr = hfr * PAGE + off
    return assist, paddr, raw


# ---------------------------------------------------------------------------
# microarchitectural bookkeeping


@njit
def touch(paddr, cache, monitored, st):
    line = paddr >> 6
    cache[line] = 1
    if monitored[paddr >> 12] == 1:
        st[S_PROBE] = st[S_PROBE] | (ONE << (line & 63))


@njit
def sb_push(sb, st, addr, val):
    cap = SB_CAPACITY
    if st[S_SB_COUNT] == cap:
        st[S_SB_HEAD] = (st[S_SB_HEAD] + 1) % cap
        st[S_SB_COUNT] = cap - 1
    slot = (st[S_SB_HEAD] + st[S_SB_COUNT]) % cap
    sb[slot, 0] = addr
    sb[slot, 1] = val
    st[S_SB_COUNT] = st[S_SB_COUNT] + 1


@njit
def sb_newest(sb, st):
    slot = (st[S_SB_HEAD] + st[S_SB_COUNT] - 1) % SB_CAPACITY
    return sb[slot, 1]


# ---------------------------------------------------------------------------
# the architectural step


@njit
def exec_one(ins, pc, actor, r, fl, mem, actors, l1f, l1b, nf, nb, space_guest,
             cache, monitored, sb, st, priv, params, sim, transient, ignore_assist):
    """Execute one decoded instruction for ``actor`` on register row ``r``.

    Returns ``(status, next_pc, code, ea, paddr, raw)``.  ``ea`` is the
    unaligned effective address of a LOAD/STORE operand (else -1); the
    access itself covers the aligned 8-byte word.  On X_FAULT and
    X_ASSIST nothing has been committed.  With ``transient`` set, memory and
    store-buffer writes and divider updates are suppressed and serialising
    instructions return X_STOP.
    """
    op = ins[F_OP]
    dst = ins[F_DST]
    s1 = ins[F_S1]
    b3 = ins[F_B3]
    nxt = pc + 1
    neg1 = np.int64(-1)
    if op == OP_NOP:
        return X_OK, nxt, F_NONE, neg1, neg1, neg1
    if op <= OP_XOR or op == OP_SHL or op == OP_SHR or op == OP_CMP or op == OP_MUL or op == OP_DIV:
        a = r[s1]
        if b3 & IMM_FLAG:
            b = ins[F_IMM]
        else:
            b = r[b3 & 7]
        if op == OP_ADD:
            v = a + b
            fl[1] = 1 if ult(v, a) else 0
        elif op == OP_SUB or op == OP_CMP:
            v = a - b
            fl[1] = 1 if ult(a, b) else 0
        elif op == OP_AND:
            v = a & b
            fl[1] = 0
        elif op == OP_OR:
            v = a | b
            fl[1] = 0
        elif op == OP_XOR:
            v = a ^ b
            fl[1] = 0
        elif op == OP_SHL:
            s = b & 63
            v = a << s
            fl[1] = (lshr(a, 64 - s) & 1) if s > 0 else 0
        elif op == OP_SHR:
            s = b & 63
            v = lshr(a, s)
            fl[1] = (lshr(a, s - 1) & 1) if s > 0 else 0
        elif op == OP_MUL:
            v = a * b
            fl[1] = 0
        else:
            divisor = b & LO32
            if divisor == 0:
                return X_FAULT, pc, DE, neg1, neg1, neg1
            dividend = a & LO32
            v = dividend // divisor
            if not transient:
                st[S_DIVQ] = v
                st[S_DIVR] = dividend % divisor
            fl[1] = 0
        set_zs(fl, v)
        if op != OP_CMP:
            r[dst] = v
        return X_OK, nxt, F_NONE, neg1, neg1, neg1
    if op == OP_CMOV:
        if cond_holds(b3, fl):
            r[dst] = r[s1]
        return X_OK, nxt, F_NONE, neg1, neg1, neg1
    if op == OP_LOAD or op == OP_STORE:
        ea = r[s1] + ins[F_DISP]
        vaddr = ea & np.int64(-8)
        write = 1 if op == OP_STORE else 0
        code, paddr, raw = translate(vaddr, write, actor, actors, l1f, l1b, nf, nb,
                                     space_guest, 0)
        if code != F_NONE:
            if code < FIRST_ASSIST:
                return X_FAULT, pc, code, ea, paddr, raw
            if not ignore_assist:
                if sim and not transient:
                    # microcode sets the missing bits before re-issuing
                    translate(vaddr, write, actor, actors, l1f, l1b, nf, nb, space_guest, 1)
                return X_ASSIST, pc, code, ea, paddr, raw
        if sim:
            touch(paddr, cache, monitored, st)
        if op == OP_LOAD:
            r[dst] = mem[paddr >> 3]
        elif not transient:
            val = r[b3 & 7]
            mem[paddr >> 3] = val
            if sim:
                sb_push(sb, st, vaddr, val)
        return X_OK, nxt, F_NONE, ea, paddr, raw
    if op == OP_BR:
        if cond_holds(b3, fl):
            return X_TAKEN, pc + ins[F_IMM], F_NONE, neg1, neg1, neg1
        return X_OK, nxt, F_NONE, neg1, neg1, neg1
    if op == OP_FENCE:
        if transient:
            return X_STOP, pc, F_NONE, neg1, neg1, neg1
        st[S_SB_COUNT] = 0
        st[S_SB_HEAD] = 0
        return X_OK, nxt, F_NONE, neg1, neg1, neg1
    if op == OP_RDPRIV:
        if actors[actor, A_MODE] == 1:
            return X_FAULT, pc, VM_PRIV, neg1, neg1, neg1
        if actors[actor, A_PRIV] == 1 or params[P_PRIV_DISABLE] != 0:
            return X_FAULT, pc, GP, neg1, neg1, neg1
        r[dst] = priv[b3 & 7]
        return X_OK, nxt, F_NONE, neg1, neg1, neg1
    if op == OP_MACRO:
        if transient:
            return X_STOP, pc, F_NONE, neg1, neg1, neg1
        return X_MACRO, pc, F_NONE, neg1, neg1, neg1
    return X_EXIT, pc, F_NONE, neg1, neg1, neg1


# ---------------------------------------------------------------------------
# transient execution


@njit
def forwarded_value(ins, code, paddr, raw, mem, cache, sb, st, priv, toggles):
    """Value a vulnerable core would hand to dependants of a faulting or
    assisted instruction; ``(ok, value)``."""
    op = ins[F_OP]
    if op == OP_LOAD:
        if code == PF_U and toggles & T_MELTDOWN:
            return True, mem[paddr >> 3]
        if code == PF_P and toggles & T_FORESHADOW and raw >= 0 and raw < MEM_WORDS * 8:
            if cache[raw >> 6] == 1:
                return True, mem[raw >> 3]
        if toggles & T_MDS and st[S_SB_COUNT] > 0:
            return True, sb_newest(sb, st)
        return False, np.int64(0)
    if op == OP_DIV and code == DE and toggles & T_DSS:
        return True, st[S_DIVQ]
    if op == OP_RDPRIV and code == GP:
        pid = ins[F_B3] & 7
        if pid < 4 and toggles & T_RSRR:
            return True, priv[pid]
        if pid >= 4 and toggles & T_SMSW:
            return True, priv[pid] & LO16
    return False, np.int64(0)


@njit
def transient_window(code, actor, pc, dst, value, regs, flags, mem, actors, l1f, l1b, nf, nb,
                     space_guest, cache, monitored, sb, st, priv, params):
    """Run up to ``params[P_WINDOW]`` instructions after ``pc`` with ``dst``
    holding ``value``, on scratch registers.  Only cache and probe state
    survive."""
    tr = regs[actor].copy()
    tf = flags[actor].copy()
    tr[dst] = value
    tpc = pc + 1
    n = params[P_WINDOW]
    limit = code.shape[1]
    for _ in range(n):
        if tpc < 0 or tpc >= limit:
            break
        status, nxt, c, va, pa, rw = exec_one(code[actor, tpc], tpc, actor, tr, tf, mem, actors,
                                              l1f, l1b, nf, nb, space_guest, cache, monitored,
                                              sb, st, priv, params, True, True, False)
        if status != X_OK and status != X_TAKEN:
            break
        tpc = nxt


# ---------------------------------------------------------------------------
# macros


@njit
def _victim(actors, a):
    return actors[a, A_OBS] == 0


@njit
def record(events, st, kind, a, b):
    n = st[S_NEV]
    if n >= events.shape[0]:
        st[S_EV_OVERFLOW] = 1
        return
    events[n, 0] = kind
    events[n, 1] = a
    events[n, 2] = b
    st[S_NEV] = n + 1


@njit
def redirect(sim, actors, st, events, src, dst_actor, dst_idx):
    if not sim and st[S_TRACING] == 1 and (_victim(actors, src) or _victim(actors, dst_actor)):
        record(events, st, EV_PC, dst_actor, dst_idx * 8)
    st[S_CUR] = dst_actor
    st[S_PC] = dst_idx


@njit
def do_macro(row, macros, actors, st, targets, events, cache, rng, noise_p, sim):
    """Apply macro ``row``.  Returns True when control was transferred."""
    mid = macros[row, MC_ID]
    cur = st[S_CUR]
    if mid == M_MEAS_START:
        if sim:
            st[S_PROBE] = 0
            st[S_MEAS] = 1
        else:
            st[S_TRACING] = 1
        return False
    if mid == M_MEAS_END:
        if sim:
            if st[S_MEAS] == 1:
                st[S_TRACE] = st[S_PROBE]
                st[S_MEAS] = 2
        else:
            st[S_TRACING] = 0
        return False
    if mid == M_SET_H2G or mid == M_SET_G2H or mid == M_SET_K2U or mid == M_SET_U2K:
        k = (mid - M_SET_H2G) if mid <= M_SET_G2H else (mid - M_SET_K2U + 2)
        targets[k, 0] = macros[row, MC_A0]
        targets[k, 1] = macros[row, MC_A1]
        return False
    if mid == M_SWITCH_H2G or mid == M_SWITCH_G2H or mid == M_SWITCH_K2U or mid == M_SWITCH_U2K:
        if mid == M_SWITCH_H2G:
            k = 0
        elif mid == M_SWITCH_G2H:
            k = 1
        elif mid == M_SWITCH_K2U:
            k = 2
        else:
            k = 3
        ta = targets[k, 0]
        if ta < 0:
            st[S_CUR] = -1
            return True
        st[S_TRANSITIONS] = st[S_TRANSITIONS] + 1
        if sim and noise_p > 0.0:
            if rng_uniform(rng) < noise_p:
                st[S_PROBE] = st[S_PROBE] ^ (ONE << rng_bit(rng))
        redirect(sim, actors, st, events, cur, ta, targets[k, 1])
        return True
    if sim:
        if mid == M_FLUSH_BUFFERS:
            st[S_SB_COUNT] = 0
            st[S_SB_HEAD] = 0
        elif mid == M_FLUSH_L1D:
            cache[:] = 0
            st[S_PROBE] = 0
        elif mid == M_FULL_FLUSH:
            cache[:] = 0
        elif mid == M_DUMMY_DIV:
            st[S_DIVQ] = 1
            st[S_DIVR] = 0
    return False


# ---------------------------------------------------------------------------
# whole test-case execution


@njit
def execute(sim, code, code_len, macro_at, macros, actors, l1f, l1b, nf, nb, space_guest,
            monitored, params, noise_p, mem, regs, flags, cache, sb, st, priv, targets,
            rng, events):
    """Run from main's entry until exit, fault without handler, or budget.

    ``sim`` selects the simulated CPU (patched code, microarchitecture,
    transient windows) over the contract model (macro callbacks, contract
    events).  Returns R_EXIT or R_BUDGET; the hardware trace is left in
    ``st[S_TRACE]`` and contract events in ``events[:st[S_NEV]]``.
    """
    toggles = params[P_TOGGLES]
    budget = params[P_BUDGET]
    fh_actor = params[P_FH_ACTOR]
    fh_idx = params[P_FH_IDX]
    st[S_CUR] = 0
    st[S_PC] = 0
    while True:
        cur = st[S_CUR]
        pc = st[S_PC]
        if cur < 0:
            break
        if st[S_STEPS] >= budget:
            return R_BUDGET
        st[S_STEPS] = st[S_STEPS] + 1
        if not sim:
            if pc < 0 or pc >= code_len[cur]:
                break
            row = macro_at[cur, pc]
            if row >= 0:
                if not do_macro(row, macros, actors, st, targets, events, cache, rng,
                                noise_p, False):
                    st[S_PC] = pc + 1
                continue
        elif pc < 0 or pc >= code.shape[1]:
            break
        ins = code[cur, pc]
        status, nxt, fcode, vaddr, paddr, raw = exec_one(
            ins, pc, cur, regs[cur], flags[cur], mem, actors, l1f, l1b, nf, nb, space_guest,
            cache, monitored, sb, st, priv, params, sim, False, not sim)
        if not sim and ins[F_OP] >= OP_LOAD and ins[F_OP] <= OP_STORE and st[S_TRACING] == 1 \
                and _victim(actors, cur):
            record(events, st, EV_LD if ins[F_OP] == OP_LOAD else EV_ST, vaddr - DATA_VA, 0)
        if status == X_OK:
            st[S_PC] = nxt
        elif status == X_TAKEN:
            if not sim and st[S_TRACING] == 1 and _victim(actors, cur):
                record(events, st, EV_PC, cur, nxt * 8)
            st[S_PC] = nxt
        elif status == X_MACRO:
            if not do_macro(ins[F_DST], macros, actors, st, targets, events, cache, rng,
                            noise_p, True):
                st[S_PC] = pc + 1
        elif status == X_ASSIST:
            # sim only: optional transient window, then the access completes
            if toggles != 0:
                ok, val = forwarded_value(ins, fcode, paddr, raw, mem, cache, sb, st, priv,
                                          toggles)
                if ok:
                    transient_window(code, cur, pc, ins[F_DST], val, regs, flags, mem, actors,
                                     l1f, l1b, nf, nb, space_guest, cache, monitored, sb, st,
                                     priv, params)
            status, nxt, fcode, vaddr, paddr, raw = exec_one(
                ins, pc, cur, regs[cur], flags[cur], mem, actors, l1f, l1b, nf, nb,
                space_guest, cache, monitored, sb, st, priv, params, sim, False, True)
            st[S_PC] = nxt
        elif status == X_FAULT:
            st[S_FAULTS] = st[S_FAULTS] + 1
            if sim and toggles != 0:
                ok, val = forwarded_value(ins, fcode, paddr, raw, mem, cache, sb, st, priv,
                                          toggles)
                if ok:
                    transient_window(code, cur, pc, ins[F_DST], val, regs, flags, mem, actors,
                                     l1f, l1b, nf, nb, space_guest, cache, monitored, sb, st,
                                     priv, params)
            if fh_actor < 0 or st[S_IN_HANDLER] == 1:
                break
            st[S_IN_HANDLER] = 1
            redirect(sim, actors, st, events, cur, fh_actor, fh_idx)
        else:
            break
    if sim and st[S_MEAS] == 1:
        st[S_TRACE] = st[S_PROBE]
        st[S_MEAS] = 2
    return R_EXIT


@njit
def reset_run(actors, l1b0, nb0, l1b, nb, in_regs, in_data, params, mem, regs, flags, cache,
              st, priv, targets):
    """Restore page permissions, load one input, and clear the
    microarchitectural state (the per-input part of the measurement loop)."""
    l1b[:, :] = l1b0
    nb[:, :] = nb0
    cache[:] = 0
    st[:] = 0
    targets[:, :] = -1
    n_act = actors.shape[0]
    for a in range(n_act):
        for j in range(3):
            hf = actors[a, A_HF + 1 + j]
            base = hf * WORDS_PER_PAGE
            mem[base:base + WORDS_PER_PAGE] = in_data[a, j * WORDS_PER_PAGE:(j + 1) * WORDS_PER_PAGE]
        pb = actors[a, A_HF + 4] * WORDS_PER_PAGE
        mem[pb:pb + WORDS_PER_PAGE] = 0
        for k in range(6):
            regs[a, k] = in_regs[a, k]
        regs[a, 6] = actors[a, A_BASE]
        regs[a, 7] = actors[a, A_PROBE]
        flags[a, 0] = 0
        flags[a, 1] = 0
        flags[a, 2] = 0
    src = params[P_PRIV_SRC]
    for k in range(N_PRIV):
        priv[k] = in_data[src, DATA_WORDS - N_PRIV + k]


@njit
def measure_kernel(code, code_len, macro_at, macros, actors, l1f, l1b0, nf, nb0, space_guest,
                   monitored, params, noise_p, in_regs, in_data, n_runs, rng,
                   traces, statuses, final_regs, final_mem):
    """``n_runs`` simulated measurements of one input, with a full reset
    between runs.  ``statuses[i]`` gets (result, steps, faults, transitions);
    the architectural end state of the last run is copied out."""
    mem = np.zeros(MEM_WORDS, dtype=np.int64)
    n_act = actors.shape[0]
    regs = np.zeros((n_act, 8), dtype=np.int64)
    flags = np.zeros((n_act, 3), dtype=np.int64)
    cache = np.zeros(NLINES, dtype=np.uint8)
    sb = np.zeros((SB_CAPACITY, 2), dtype=np.int64)
    st = np.zeros(N_STATE, dtype=np.int64)
    priv = np.zeros(N_PRIV, dtype=np.int64)
    targets = np.full((4, 2), -1, dtype=np.int64)
    events = np.zeros((1, 3), dtype=np.int64)
    l1b = l1b0.copy()
    nb = nb0.copy()
    for i in range(n_runs):
        reset_run(actors, l1b0, nb0, l1b, nb, in_regs, in_data, params, mem, regs, flags,
                  cache, st, priv, targets)
        res = execute(True, code, code_len, macro_at, macros, actors, l1f, l1b, nf, nb,
                      space_guest, monitored, params, noise_p, mem, regs, flags, cache, sb, st,
                      priv, targets, rng, events)
        traces[i] = st[S_TRACE]
        statuses[i, 0] = res
        statuses[i, 1] = st[S_STEPS]
        statuses[i, 2] = st[S_FAULTS]
        statuses[i, 3] = st[S_TRANSITIONS]
    final_regs[:, :] = regs
    final_mem[:] = mem


@njit
def model_kernel(code, code_len, macro_at, macros, actors, l1f, l1b0, nf, nb0, space_guest,
                 params, in_regs, in_data, events, out, final_regs, final_mem):
    """One contract-model run; ``out`` receives (result, n_events, overflow)."""
    mem = np.zeros(MEM_WORDS, dtype=np.int64)
    n_act = actors.shape[0]
    regs = np.zeros((n_act, 8), dtype=np.int64)
    flags = np.zeros((n_act, 3), dtype=np.int64)
    cache = np.zeros(1, dtype=np.uint8)
    monitored = np.zeros(NFRAMES, dtype=np.int64)
    sb = np.zeros((SB_CAPACITY, 2), dtype=np.int64)
    st = np.zeros(N_STATE, dtype=np.int64)
    priv = np.zeros(N_PRIV, dtype=np.int64)
    targets = np.full((4, 2), -1, dtype=np.int64)
    rng = np.zeros(1, dtype=np.uint64)
    l1b = l1b0.copy()
    nb = nb0.copy()
    reset_run(actors, l1b0, nb0, l1b, nb, in_regs, in_data, params, mem, regs, flags, cache,
              st, priv, targets)
    res = execute(False, code, code_len, macro_at, macros, actors, l1f, l1b, nf, nb, space_guest,
                  monitored, params, 0.0, mem, regs, flags, cache, sb, st, priv, targets, rng,
                  events)
    out[0] = res
    out[1] = st[S_NEV]
    out[2] = st[S_EV_OVERFLOW]
    final_regs[:, :] = regs
    final_mem[:] = mem


@njit
def step_kernel(ins, pc, actor, r, fl, mem, actors, l1f, l1b, nf, nb, space_guest, priv, params,
                div_state):
    """Single architectural step for the public ``arch_step`` API."""
    cache = np.zeros(NLINES, dtype=np.uint8)
    monitored = np.zeros(NFRAMES, dtype=np.int64)
    sb = np.zeros((SB_CAPACITY, 2), dtype=np.int64)
    st = np.zeros(N_STATE, dtype=np.int64)
    st[S_DIVQ] = div_state[0]
    st[S_DIVR] = div_state[1]
    status, nxt, code, vaddr, paddr, raw = exec_one(ins, pc, actor, r, fl, mem, actors, l1f, l1b,
                                                    nf, nb, space_guest, cache, monitored, sb, st,
                                                    priv, params, False, False, True)
    div_state[0] = st[S_DIVQ]
    div_state[1] = st[S_DIVR]
    return status, nxt, code, vaddr, paddr
