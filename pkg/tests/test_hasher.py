"""Hasherサービスのテスト"""

import hashlib
import logging
import tempfile
from pathlib import Path

import pytest
import xxhash

from src.services.hasher import Hasher


class TestHasher:
    """Hasherクラスのテスト"""

    def test_default_algorithm_is_xxhash64(self):
        """デフォルトはxxhash64であることを確認する。"""
        # Given
        hasher = Hasher()

        # When
        result = hasher.hash_bytes(b"local discrimination")

        # Then
        assert result == xxhash.xxh64(b"local discrimination").hexdigest()

    def test_hash_file_matches_hashlib(self):
        """sha256指定時にhashlibと同じ結果を返すことを確認する。"""
        # Given: 小さなチャンクで読み込むテストファイル (10KB)
        test_content = b"A" * 8192 + b"B" * 2048
        with tempfile.NamedTemporaryFile(delete=False) as temp_file:
            temp_file.write(test_content)
            temp_file_path = temp_file.name

        try:
            hasher = Hasher(hash_algorithm="sha256", chunk_size=4096)

            # When
            result = hasher.hash_file(temp_file_path)

            # Then
            assert result == hashlib.sha256(test_content).hexdigest()
        finally:
            Path(temp_file_path).unlink()

    def test_hash_file_not_found(self):
        """存在しないファイルのハッシュ計算テスト"""
        hasher = Hasher()

        with pytest.raises(FileNotFoundError):
            hasher.hash_file("/non/existent/file.pt")

    def test_unsupported_algorithm(self):
        """未対応のアルゴリズムはValueErrorになることを確認する。"""
        with pytest.raises(ValueError, match="Unsupported hash algorithm"):
            Hasher(hash_algorithm="crc-nonexistent")

    def test_invalid_chunk_size(self):
        """chunk_sizeが0以下ならValueErrorになることを確認する。"""
        with pytest.raises(ValueError, match="chunk_size"):
            Hasher(chunk_size=0)

    def test_hash_config_ignores_key_order(self):
        """設定辞書のキー順序に依存しないことを確認する。"""
        hasher = Hasher()
        first = hasher.hash_config({"seed": 0, "ld": {"lr": 0.001, "tau": 0.1}})
        second = hasher.hash_config({"ld": {"tau": 0.1, "lr": 0.001}, "seed": 0})

        assert first == second
        assert first != hasher.hash_config({"seed": 1, "ld": {"lr": 0.001, "tau": 0.1}})

    def test_hash_config_accepts_tuples_and_none(self):
        """タプルやNoneを含む設定もハッシュできることを確認する。"""
        digest = Hasher().hash_config({"axes": (8.5, 8.5), "reference_dir": None})
        assert isinstance(digest, str) and digest

    def test_hash_files_parallel(self, tmp_path):
        """複数ファイルのハッシュが単体計算と一致することを確認する。"""
        # Given
        paths = []
        for index, content in enumerate([b"X" * 1024, b"Y" * 2048, b"Z" * 4096]):
            path = tmp_path / f"file_{index}.bin"
            path.write_bytes(content)
            paths.append(path)
        hasher = Hasher()

        # When
        digests = hasher.hash_files_parallel(paths, max_workers=4)

        # Then
        assert len(digests) == 3
        for path in paths:
            assert digests[str(path)] == hasher.hash_file(path)

    def test_hash_files_parallel_noop_on_empty_list(self):
        """空リストでは何もせずに即時終了することを確認する。"""
        assert Hasher().hash_files_parallel([], max_workers=4) == {}

    def test_hash_files_parallel_logs_and_skips_failures(self, tmp_path, caplog):
        """1件失敗しても処理を継続し、warningを出すことを確認する。"""
        # Given: 正常なファイルと存在しないファイル
        good = tmp_path / "good.bin"
        good.write_bytes(b"ok")
        missing = tmp_path / "missing.bin"

        # When
        with caplog.at_level(logging.WARNING):
            digests = Hasher().hash_files_parallel([good, missing])

        # Then
        assert list(digests) == [str(good)]
        assert any("missing.bin" in record.getMessage() for record in caplog.records)

    def test_hash_tree_tracks_content(self, tmp_path):
        """ソースツリーのハッシュが内容の変更で変わることを確認する。"""
        # Given
        (tmp_path / "pkg").mkdir()
        (tmp_path / "pkg" / "a.py").write_text("x = 1\n")
        (tmp_path / "pkg" / "b.py").write_text("y = 2\n")
        (tmp_path / "pkg" / "notes.txt").write_text("ignored")
        hasher = Hasher()

        # When
        before = hasher.hash_tree(tmp_path / "pkg")
        (tmp_path / "pkg" / "notes.txt").write_text("still ignored")
        unchanged = hasher.hash_tree(tmp_path / "pkg")
        (tmp_path / "pkg" / "b.py").write_text("y = 3\n")
        after = hasher.hash_tree(tmp_path / "pkg")

        # Then
        assert before == unchanged
        assert before != after
