import sqlite3
import threading
from datetime import datetime
from enum import Enum

FRESHNESS_WINDOW = 120


class Admission(Enum):
    ADMITTED = "admitted"
    STALE = "stale"
    DUPLICATE = "duplicate"


def init_database(db_path=":memory:"):
    """Open (and create if needed) the ledger database"""
    conn = sqlite3.connect(db_path, check_same_thread=False, isolation_level=None)
    c = conn.cursor()
    c.execute('''CREATE TABLE IF NOT EXISTS sessions
                 (nonce BLOB PRIMARY KEY,
                  timestamp INTEGER,
                  expires INTEGER)''')
    c.execute('''CREATE TABLE IF NOT EXISTS registrations
                 (did BLOB PRIMARY KEY,
                  pk BLOB,
                  issued_date TEXT)''')
    return conn


def record_session(conn, nonce, timestamp, expires):
    """Insert a session nonce; False if it was already present"""
    try:
        conn.execute('INSERT INTO sessions VALUES (?, ?, ?)', (nonce, timestamp, expires))
    except sqlite3.IntegrityError:
        return False
    return True


def purge_sessions(conn, now):
    """Drop nonces whose freshness window has passed"""
    conn.execute('DELETE FROM sessions WHERE expires < ?', (int(now),))


def record_registration(conn, did, pk):
    """Mark an issuer nonce as spent; False if it was spent before"""
    try:
        conn.execute('INSERT INTO registrations VALUES (?, ?, ?)',
                     (did, pk, datetime.now().strftime('%Y-%m-%d')))
    except sqlite3.IntegrityError:
        return False
    return True


def get_registration_date(conn, pk):
    """Get the date a public key was last registered"""
    c = conn.execute('''SELECT issued_date FROM registrations
                        WHERE pk = ?
                        ORDER BY issued_date DESC LIMIT 1''', (pk,))
    result = c.fetchone()
    return result[0] if result else None


class SessionLedger:
    """Seen-nonce store of an entry node.

    A session is admitted once, and only while its timestamp is within
    `window` seconds of `now`. Nonces are forgotten after they could no
    longer pass the freshness check anyway.
    """

    def __init__(self, db_path=":memory:", window=FRESHNESS_WINDOW):
        self.window = window
        self._conn = init_database(db_path)
        self._lock = threading.Lock()

    def admit(self, sid, now):
        if abs(int(now) - sid.timestamp) > self.window:
            return Admission.STALE
        with self._lock:
            purge_sessions(self._conn, now)
            fresh = record_session(self._conn, sid.nonce, sid.timestamp,
                                   sid.timestamp + self.window)
        return Admission.ADMITTED if fresh else Admission.DUPLICATE

    def __len__(self):
        with self._lock:
            return self._conn.execute('SELECT COUNT(*) FROM sessions').fetchone()[0]

    def close(self):
        self._conn.close()


class RegistrationLog:
    """Issuer-side log of handed-out and spent registration nonces."""

    def __init__(self, db_path=":memory:"):
        self._conn = init_database(db_path)
        self._lock = threading.Lock()
        self._pending = set()

    def issue(self, did):
        with self._lock:
            self._pending.add(did)

    def spend(self, did, pk):
        """Consume `did`. False if it was never issued or already used."""
        with self._lock:
            if did not in self._pending:
                return False
            self._pending.discard(did)
            return record_registration(self._conn, did, pk)

    def registered_on(self, pk):
        with self._lock:
            return get_registration_date(self._conn, pk)
