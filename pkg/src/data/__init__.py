"""
合成データモジュール
"""
