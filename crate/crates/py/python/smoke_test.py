import json
import struct

import pirsi


def main():
    db = pirsi.Database.random(8, 4, seed=3)
    assert db.k == 8 and db.t == 4 and len(db) == 8

    r = pirsi.fetch("partition", db, 2, [4, 6], seed=1)
    assert r["message"] == db.message(2)
    assert r["downloaded_bits"] == 12 and r["rate"] == "1/3"
    json.loads(r["transcript"])

    r = pirsi.fetch("mds", db, 3, [1])
    assert r["message"] == db.message(3)
    assert r["downloaded_bits"] == 28

    small = pirsi.Database.random(4, 4, seed=9)
    r = pirsi.fetch("multiserver", small, 3, [4], n=2, seed=7)
    assert r["message"] == small.message(3)
    assert r["downloaded_bits"] == 6 and r["rate"] == "2/3"

    a = pirsi.audit("partition", 3, 1)
    assert a["private"] and a["max_deviation"] == "0"
    assert not pirsi.audit("partition", 4, 1, joint=True)["private"]

    assert pirsi.capacity_w(8, 2) == (1, 3)
    assert pirsi.capacity_ws(8, 2) == (1, 6)
    assert pirsi.multiserver_rate_lb(2, 4, 1) == (2, 3)
    assert pirsi.sj_download_cost(2, 2) == (6, (2, 3))

    hello = b"PS\x01\x01" + struct.pack(">I", 6) + struct.pack(">HI", 8, 4)
    reply = pirsi.Server(db).handle(hello)
    assert reply[:4] == b"PS\x01\x81", reply

    print("smoke ok")


if __name__ == "__main__":
    main()
