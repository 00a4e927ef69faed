"""Recursive-descent parser for the protocol DSL.

Entry points: parse_global, parse_local, parse_process, parse_expr.
Errors carry line/column positions.  The grammar is documented in the
README; queue terms are accepted so machine-generated states round-trip.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import syntax as sx


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<arrow_r>->r\b)
  | (?P<arrow_u>->u\b)
  | (?P<arrow_w>->w\b)
  | (?P<arrow>->)
  | (?P<dlangle><<)
  | (?P<drangle>>>)
  | (?P<op>==|!=|<=|>=)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym>[{}()\[\],.:;|!?<>@=+\-*])
    """,
    re.VERBOSE,
)

KEYWORDS = {"req", "acc", "mu", "new", "if", "then", "else", "crash", "rec",
            "end", "default", "queue", "true", "false", "bot", "and", "or",
            "not"}


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str):
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        lexeme = m.group()
        if kind not in ("ws", "comment"):
            if kind == "sym" or kind in ("arrow", "dlangle", "drangle", "op",
                                         "arrow_r", "arrow_u", "arrow_w"):
                tokens.append(Token(lexeme, lexeme, line, col))
            else:
                tokens.append(Token(kind, lexeme, line, col))
        nl = lexeme.count("\n")
        if nl:
            line += nl
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0

    # --- token plumbing

    def peek(self, ahead=0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def at(self, kind: str, ahead=0) -> bool:
        return self.peek(ahead).kind == kind

    def at_word(self, word: str, ahead=0) -> bool:
        t = self.peek(ahead)
        return t.kind == "ident" and t.text == word

    def expect(self, kind: str) -> Token:
        t = self.peek()
        if t.kind != kind:
            raise ParseError(f"expected {kind!r}, found {t.text or 'end of input'!r}",
                             t.line, t.col)
        return self.next()

    def expect_word(self, word: str) -> Token:
        t = self.peek()
        if not (t.kind == "ident" and t.text == word):
            raise ParseError(f"expected {word!r}, found {t.text or 'end of input'!r}",
                             t.line, t.col)
        return self.next()

    def fail(self, msg: str):
        t = self.peek()
        raise ParseError(msg + f" (found {t.text or 'end of input'!r})", t.line, t.col)

    def expect_eof(self):
        t = self.peek()
        if t.kind != "eof":
            raise ParseError(f"trailing input {t.text!r}", t.line, t.col)

    # --- shared pieces

    def ident(self) -> str:
        t = self.expect("ident")
        return t.text

    def integer(self) -> int:
        t = self.expect("int")
        return int(t.text)

    def label(self) -> sx.Label:
        t = self.expect("ident")
        meta = None
        if self.at("@"):
            self.next()
            meta = self.integer()
        return sx.Label(t.text, meta)

    def sort(self) -> sx.Sort:
        t = self.expect("ident")
        s = sx.SORTS_BY_NAME.get(t.text)
        if s is None:
            raise ParseError(f"unknown sort {t.text!r}", t.line, t.col)
        return s

    def roleset(self) -> tuple:
        self.expect("{")
        roles = [self.integer()]
        while self.at(","):
            self.next()
            roles.append(self.integer())
        self.expect("}")
        return tuple(roles)

    # --- expressions
    #
    # Inside <...> payload brackets a bare '>' terminates the expression, so
    # the > and >= comparisons are only recognized outside that context
    # (parenthesize to use them in a payload).

    def expr(self, no_gt=False):
        return self._or(no_gt)

    def _or(self, no_gt):
        e = self._and(no_gt)
        while self.at_word("or"):
            self.next()
            e = sx.BinOp("or", e, self._and(no_gt))
        return e

    def _and(self, no_gt):
        e = self._not(no_gt)
        while self.at_word("and"):
            self.next()
            e = sx.BinOp("and", e, self._not(no_gt))
        return e

    def _not(self, no_gt):
        if self.at_word("not"):
            self.next()
            return sx.Not(self._not(no_gt))
        return self._cmp(no_gt)

    def _cmp(self, no_gt):
        e = self._add(no_gt)
        ops = ("==", "!=", "<=", "<", "=") if no_gt else ("==", "!=", "<=", ">=",
                                                          "<", ">", "=")
        if self.peek().kind in ops:
            op = self.next().kind
            if op == "=":
                op = "=="
            return sx.BinOp(op, e, self._add(no_gt))
        return e

    def _add(self, no_gt):
        e = self._mul(no_gt)
        while self.peek().kind in ("+", "-"):
            op = self.next().kind
            e = sx.BinOp(op, e, self._mul(no_gt))
        return e

    def _mul(self, no_gt):
        e = self._atom(no_gt)
        while self.at("*"):
            self.next()
            e = sx.BinOp("*", e, self._atom(no_gt))
        return e

    def _atom(self, no_gt):
        t = self.peek()
        if t.kind == "int":
            return sx.Lit(sx.NatV(self.integer()))
        if t.kind == "(":
            self.next()
            e = self.expr(no_gt=False)
            self.expect(")")
            return e
        if t.kind == "ident":
            word = t.text
            if word == "true":
                self.next()
                return sx.TRUE
            if word == "false":
                self.next()
                return sx.FALSE
            if word == "bot":
                self.next()
                return sx.Lit(sx.BOT)
            if word in ("roll", "best", "count_ack", "known") and self.at("(", 1):
                self.next()
                self.next()
                args = [self.expr(no_gt=False)]
                while self.at(","):
                    self.next()
                    args.append(self.expr(no_gt=False))
                self.expect(")")
                if word == "roll":
                    if len(args) != 1:
                        raise ParseError("roll takes one argument", t.line, t.col)
                    return sx.Roll(args[0])
                ctor = {"best": sx.Best, "count_ack": sx.CountAck, "known": sx.Known}[word]
                return ctor(tuple(args))
            self.next()
            return sx.Name(word)
        self.fail("expected an expression")

    # --- values (closed message payloads)

    def value(self) -> sx.Value:
        t = self.peek()
        if t.kind == "int":
            return sx.NatV(self.integer())
        if self.at_word("true"):
            self.next()
            return sx.BoolV(True)
        if self.at_word("false"):
            self.next()
            return sx.BoolV(False)
        if self.at_word("bot"):
            self.next()
            return sx.BOT
        self.fail("expected a value")

    # --- global types

    def global_type(self):
        t = self.peek()
        if t.kind == "(":
            self.next()
            g = self.global_type()
            if self.at("|"):
                self.next()
                right = self.global_type()
                self.expect(")")
                return sx.GPar(g, right)
            self.expect(")")
            return g
        if self.at_word("rec"):
            self.next()
            var = self.ident()
            self.expect(".")
            return sx.GRec(var, self.global_type())
        if self.at_word("end"):
            self.next()
            return sx.G_END
        if t.kind == "ident":
            self.next()
            return sx.GVar(t.text)
        if t.kind == "int":
            return self._global_interaction()
        self.fail("expected a global type")

    def _global_interaction(self):
        src = self.integer()
        arrow = self.peek()
        if arrow.kind == "->r":
            self.next()
            dst = self.integer()
            self.expect(":")
            if self.at("<<"):
                self.next()
                chan = self.ident()
                self.expect("@")
                role = self.integer()
                self.expect(":")
                lt = self.local_type()
                self.expect(">>")
                self.expect(".")
                return sx.GDeleg(src, dst, chan, role, lt, self.global_type())
            if self.at("<"):
                self.next()
                s = self.sort()
                self.expect(">")
                self.expect(".")
                return sx.GComR(src, dst, s, self.global_type())
            if self.at("{"):
                branches, _ = self._gbranches(allow_default=False)
                return sx.GBranR(src, dst, branches)
            self.fail("expected <sort>, <<delegation>>, or branches")
        if arrow.kind == "->u":
            self.next()
            dst = self.integer()
            self.expect(":")
            lab = self.label()
            self.expect("<")
            s = self.sort()
            self.expect(">")
            self.expect(".")
            return sx.GComU(src, dst, lab, s, self.global_type())
        if arrow.kind == "->w":
            self.next()
            receivers = self.roleset()
            self.expect(":")
            branches, default = self._gbranches(allow_default=True)
            if default is None:
                self.fail("weak branching requires a default branch")
            return sx.GBranW(src, receivers, branches, default)
        self.fail("expected ->r, ->u, or ->w")

    def _gbranches(self, allow_default: bool):
        self.expect("{")
        branches = []
        default = None
        while True:
            is_default = False
            if allow_default and self.at_word("default"):
                self.next()
                is_default = True
            lab = self.label()
            self.expect(":")
            g = self.global_type()
            branches.append((lab, g))
            if is_default:
                default = lab
            if self.at(","):
                self.next()
                continue
            break
        self.expect("}")
        return tuple(branches), default

    # --- local types

    def local_type(self):
        t = self.peek()
        if t.kind == "(":
            self.next()
            l = self.local_type()
            self.expect(")")
            return l
        if self.at_word("rec"):
            self.next()
            var = self.ident()
            self.expect(".")
            return sx.LRec(var, self.local_type())
        if self.at_word("end"):
            self.next()
            return sx.L_END
        if t.kind == "ident":
            self.next()
            return sx.LVar(t.text)
        if t.kind == "[":
            return self._local_action()
        self.fail("expected a local type")

    def _local_action(self):
        self.expect("[")
        if self.at("{"):
            receivers = self.roleset()
            self.expect("]")
            self.expect("!")
            self.expect_word("w")
            branches, _ = self._lbranches(allow_default=False)
            return sx.LSelW(receivers, branches)
        peer = self.integer()
        self.expect("]")
        if self.at("!"):
            self.next()
            if self.at("<<"):
                self.next()
                chan = self.ident()
                self.expect("@")
                role = self.integer()
                self.expect(":")
                carried = self.local_type()
                self.expect(">>")
                self.expect(".")
                return sx.LDelegOut(peer, chan, role, carried, self.local_type())
            if self.at_word("r"):
                self.next()
                if self.at("<"):
                    self.next()
                    s = self.sort()
                    self.expect(">")
                    self.expect(".")
                    return sx.LSendR(peer, s, self.local_type())
                branches, _ = self._lbranches(allow_default=False)
                return sx.LSelR(peer, branches)
            if self.at_word("u"):
                self.next()
                lab = self.label()
                self.expect("<")
                s = self.sort()
                self.expect(">")
                self.expect(".")
                return sx.LSendU(peer, lab, s, self.local_type())
            self.fail("expected r, u, or <<delegation>> after !")
        if self.at("?"):
            self.next()
            if self.at("<<"):
                self.next()
                chan = self.ident()
                self.expect("@")
                role = self.integer()
                self.expect(":")
                carried = self.local_type()
                self.expect(">>")
                self.expect(".")
                return sx.LDelegIn(peer, chan, role, carried, self.local_type())
            if self.at_word("r"):
                self.next()
                if self.at("<"):
                    self.next()
                    s = self.sort()
                    self.expect(">")
                    self.expect(".")
                    return sx.LGetR(peer, s, self.local_type())
                branches, _ = self._lbranches(allow_default=False)
                return sx.LBranR(peer, branches)
            if self.at_word("u"):
                self.next()
                lab = self.label()
                self.expect("<")
                s = self.sort()
                self.expect(">")
                self.expect(".")
                return sx.LGetU(peer, lab, s, self.local_type())
            if self.at_word("w"):
                self.next()
                branches, default = self._lbranches(allow_default=True)
                if default is None:
                    self.fail("weak branching requires a default branch")
                return sx.LBranW(peer, branches, default)
            self.fail("expected r, u, w, or <<delegation>> after ?")
        self.fail("expected ! or ?")

    def _lbranches(self, allow_default: bool):
        self.expect("{")
        branches = []
        default = None
        while True:
            is_default = False
            if allow_default and self.at_word("default"):
                self.next()
                is_default = True
            lab = self.label()
            self.expect(":")
            l = self.local_type()
            branches.append((lab, l))
            if is_default:
                default = lab
            if self.at(","):
                self.next()
                continue
            break
        self.expect("}")
        return tuple(branches), default

    # --- processes

    def process(self):
        p = self.process_unary()
        while self.at("|"):
            self.next()
            p = sx.Par(p, self.process_unary())
        return p

    def process_unary(self):
        t = self.peek()
        if t.kind == "(":
            self.next()
            p = self.process()
            self.expect(")")
            return p
        if t.kind == "int":
            if t.text == "0":
                self.next()
                return sx.P_END
            self.fail("expected a process")
        if self.at_word("crash"):
            self.next()
            return sx.P_CRASH
        if self.at_word("req") or self.at_word("acc"):
            kw = self.next().text
            shared = self.ident()
            self.expect("[")
            r = self.integer()
            self.expect("]")
            self.expect("(")
            session = self.ident()
            self.expect(")")
            self.expect(".")
            body = self.process_unary()
            if kw == "req":
                return sx.Request(shared, r, session, body)
            return sx.Accept(shared, r, session, body)
        if self.at_word("mu"):
            self.next()
            var = self.ident()
            self.expect(".")
            return sx.Rec(var, self.process_unary())
        if self.at_word("new"):
            self.next()
            name = self.ident()
            self.expect(".")
            return sx.Restrict(name, self.process_unary())
        if self.at_word("if"):
            self.next()
            cond = self.expr()
            self.expect_word("then")
            then = self.process_unary()
            self.expect_word("else")
            els = self.process_unary()
            return sx.If(cond, then, els)
        if self.at_word("queue"):
            self.next()
            session = self.ident()
            self.expect(":")
            src = self.integer()
            self.expect("->")
            dst = self.integer()
            self.expect("[")
            items = []
            if not self.at("]"):
                items.append(self.message())
                while self.at(","):
                    self.next()
                    items.append(self.message())
            self.expect("]")
            return sx.Queue(session, src, dst, tuple(items))
        if t.kind == "ident":
            if self.at("[", 1):
                return self._channel_action()
            self.next()
            return sx.PVar(t.text)
        self.fail("expected a process")

    def _role(self):
        t = self.peek()
        if t.kind == "int":
            return self.integer()
        if t.kind == "ident":
            return self.ident()  # delegation-bound role variable
        self.fail("expected a role")

    def _channel_action(self):
        session = self.ident()
        self.expect("[")
        role = self._role()
        self.expect(",")
        if self.at("{"):
            receivers = self.roleset()
            self.expect("]")
            self.expect("!")
            self.expect_word("w")
            lab = self.label()
            self.expect(".")
            return sx.SelW(session, role, receivers, lab, self.process_unary())
        peer = self._role()
        self.expect("]")
        if self.at("!"):
            self.next()
            if self.at("<<"):
                self.next()
                chan = self.ident()
                self.expect("@")
                crole = self._role()
                self.expect(">>")
                self.expect(".")
                return sx.DelegOut(session, role, peer, chan, crole, self.process_unary())
            if self.at("<"):
                self.next()
                e = self.expr(no_gt=True)
                self.expect(">")
                self.expect(".")
                return sx.SendR(session, role, peer, e, self.process_unary())
            if self.at_word("u"):
                self.next()
                lab = self.label()
                self.expect("<")
                e = self.expr(no_gt=True)
                self.expect(">")
                self.expect(".")
                return sx.SendU(session, role, peer, lab, e, self.process_unary())
            if self.at_word("r"):
                self.next()
                lab = self.label()
                self.expect(".")
                return sx.SelR(session, role, peer, lab, self.process_unary())
            if self.at_word("w"):
                self.fail("weak selection needs a receiver set: s[r,{..}]!w l")
            self.fail("expected <expr>, u, r, or <<delegation>> after !")
        if self.at("?"):
            self.next()
            if self.at("(") and self.at("(", 1):
                self.next()
                self.next()
                chan = self.ident()
                self.expect("@")
                crole = self.ident()
                self.expect(")")
                self.expect(")")
                self.expect(".")
                return sx.DelegIn(session, role, peer, chan, crole, self.process_unary())
            if self.at("("):
                self.next()
                binder = self.ident()
                self.expect(")")
                self.expect(".")
                return sx.GetR(session, role, peer, binder, self.process_unary())
            if self.at_word("u"):
                self.next()
                lab = self.label()
                self.expect("(")
                default = self.expr()
                self.expect("->")
                binder = self.ident()
                self.expect(")")
                self.expect(".")
                return sx.GetU(session, role, peer, lab, default, binder,
                               self.process_unary())
            if self.at_word("r"):
                self.next()
                branches, _ = self._pbranches(allow_default=False)
                return sx.BranR(session, role, peer, branches)
            if self.at_word("w"):
                self.next()
                branches, default = self._pbranches(allow_default=True)
                if default is None:
                    self.fail("weak branching requires a default branch")
                return sx.BranW(session, role, peer, branches, default)
            self.fail("expected (x), ((c@r)), u, r, or w after ?")
        self.fail("expected ! or ?")

    def _pbranches(self, allow_default: bool):
        self.expect("{")
        branches = []
        default = None
        while True:
            is_default = False
            if allow_default and self.at_word("default"):
                self.next()
                is_default = True
            lab = self.label()
            self.expect(":")
            p = self.process()
            branches.append((lab, p))
            if is_default:
                default = lab
            if self.at(","):
                self.next()
                continue
            break
        self.expect("}")
        return tuple(branches), default

    # --- messages

    def message(self):
        t = self.peek()
        if self.at_word("r"):
            self.next()
            self.expect("<")
            v = self.value()
            self.expect(">")
            return sx.MsgR(v)
        if self.at_word("u"):
            self.next()
            lab = self.label()
            self.expect("<")
            v = self.value()
            self.expect(">")
            return sx.MsgU(lab, v)
        if self.at_word("br"):
            self.next()
            return sx.MsgBranR(self.label())
        if self.at_word("bw"):
            self.next()
            return sx.MsgBranW(self.label())
        if self.at_word("dg"):
            self.next()
            chan = self.ident()
            self.expect("@")
            role = self.integer()
            return sx.MsgDeleg(chan, role)
        self.fail("expected a message")


def parse_global(text: str) -> sx.GlobalType:
    p = _Parser(text)
    g = p.global_type()
    p.expect_eof()
    return g


def parse_local(text: str) -> sx.LocalType:
    p = _Parser(text)
    l = p.local_type()
    p.expect_eof()
    return l


def parse_process(text: str) -> sx.Process:
    p = _Parser(text)
    proc = p.process()
    p.expect_eof()
    return proc


def parse_expr(text: str) -> sx.Expr:
    p = _Parser(text)
    e = p.expr()
    p.expect_eof()
    return e
